"""End-to-end CLI tests: run layout, manifests, exit codes, reproducibility."""

import hashlib
import json
import os

import numpy as np
import pytest

from tjunction import __version__
from tjunction.cli import main
from tjunction.policies import SoftmaxPolicy, meta_policy, tabular_policy

TINY_CFG = """\
# desk-scale budgets for CLI tests
pipeline.p_naturalistic = uniform(-1,3)
pipeline.p0 = uniform(-1,3)
pipeline.mu0 = 1.0
pipeline.sigma = 0.5
pipeline.iterations = 1
pipeline.n_samples = 30
pipeline.episode_log_limit = 5
social.updates = 1
social.batch = 2
meta.updates = 1
meta.batch = 2
meta.lambda_reg = 5
ego.updates = 2
ego.batch = 4
ego.lr = 0.5
ce.n_ce = 20
ce.max_iters = 2
ce.threshold = 0.05
"""


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY_CFG)
    return str(path)


@pytest.fixture(scope="module")
def policy_files(tmp_path_factory, meta):
    d = tmp_path_factory.mktemp("policies")
    ego_path = str(d / "ego.policy.json")
    meta_path = str(d / "meta.policy.json")
    tabular_policy().save(ego_path)
    meta.save(meta_path)
    return ego_path, meta_path


def run_dir_from(capsys):
    out = capsys.readouterr().out
    for line in out.splitlines():
        if line.startswith("run directory: "):
            return line.split(": ", 1)[1], out
    raise AssertionError(f"no run directory line in output:\n{out}")


def _artifact_hashes(run_dir):
    art = os.path.join(run_dir, "artifacts")
    out = {}
    for dirpath, _, files in os.walk(art):
        for name in files:
            p = os.path.join(dirpath, name)
            rel = os.path.relpath(p, art)
            out[rel] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


class TestRunLayout:
    def test_pipeline_creates_manifest_and_artifacts(self, tiny_cfg, tmp_path, capsys):
        rc = main(["pipeline", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--seed", "3", "--label", "smoke"])
        assert rc == 0
        run_dir, out = run_dir_from(capsys)
        assert "mu sequence:" in out
        assert os.path.basename(run_dir).startswith("pipeline-")
        manifest = json.load(open(os.path.join(run_dir, "manifest.json")))
        assert manifest["command"] == "pipeline"
        assert manifest["seed"] == 3
        assert manifest["label"] == "smoke"
        assert manifest["tool_version"] == __version__
        assert manifest["config_source"] == tiny_cfg
        assert manifest["config"]["pipeline.iterations"] == "1"
        assert manifest["overrides"] == []
        assert "total" in manifest["timings"]
        for rel in manifest["artifacts"]:
            assert os.path.exists(os.path.join(run_dir, rel)), rel
        assert "artifacts/pipeline_trace.json" in manifest["artifacts"]
        assert "artifacts/guides/meta.policy.json" in manifest["artifacts"]

    def test_runs_never_collide(self, tiny_cfg, tmp_path, capsys):
        dirs = []
        for _ in range(2):
            assert main(["train-social", "--config", tiny_cfg, "--beta", "1.0",
                         "--out", str(tmp_path)]) == 0
            dirs.append(run_dir_from(capsys)[0])
        assert dirs[0] != dirs[1]
        assert all(os.path.isdir(d) for d in dirs)

    def test_out_env_var_is_fallback_root(self, tiny_cfg, tmp_path, capsys,
                                          monkeypatch):
        monkeypatch.setenv("TJUNCTION_OUT", str(tmp_path / "envroot"))
        rc = main(["train-social", "--config", tiny_cfg, "--beta", "0.0"])
        assert rc == 0
        run_dir, _ = run_dir_from(capsys)
        assert run_dir.startswith(str(tmp_path / "envroot"))

    def test_set_override_recorded_and_applied(self, tiny_cfg, tmp_path, capsys):
        rc = main(["pipeline", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--set", "pipeline.iterations=2"])
        assert rc == 0
        run_dir, _ = run_dir_from(capsys)
        manifest = json.load(open(os.path.join(run_dir, "manifest.json")))
        assert manifest["overrides"] == ["pipeline.iterations=2"]
        assert manifest["config"]["pipeline.iterations"] == "2"
        trace = json.load(open(os.path.join(
            run_dir, "artifacts", "pipeline_trace.json")))
        assert trace["iterations"] == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert __version__ in capsys.readouterr().out


class TestExitCodes:
    def test_bad_config_value_is_2(self, tiny_cfg, tmp_path, capsys):
        rc = main(["pipeline", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--set", "pipeline.iterations=zero"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_config_key_is_2(self, tiny_cfg, tmp_path):
        rc = main(["pipeline", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--set", "bogus.key=1"])
        assert rc == 2

    def test_missing_config_is_3(self, tmp_path):
        rc = main(["pipeline", "--config", "no-such-preset", "--out", str(tmp_path)])
        assert rc == 3

    def test_missing_policy_file_is_3(self, tiny_cfg, tmp_path):
        rc = main(["train-ego", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--meta", str(tmp_path / "absent.policy.json")])
        assert rc == 3

    def test_uncovered_proposal_is_4(self, tiny_cfg, tmp_path, policy_files, capsys):
        ego_path, meta_path = policy_files
        rc = main(["evaluate", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--ego", ego_path, "--meta", meta_path,
                   "--proposal", "gaussian(99,0.01)"])
        assert rc == 4
        assert "does not cover" in capsys.readouterr().err


class TestCommands:
    def test_train_social_writes_policy_and_history(self, tiny_cfg, tmp_path, capsys):
        rc = main(["train-social", "--config", tiny_cfg, "--beta", "2.0",
                   "--out", str(tmp_path)])
        assert rc == 0
        run_dir, _ = run_dir_from(capsys)
        pol = SoftmaxPolicy.load(os.path.join(run_dir, "artifacts", "social.policy.json"))
        assert pol.feature_map.kind == "tabular"
        history = json.load(open(os.path.join(run_dir, "artifacts", "history.json")))
        assert len(history) == 1  # social.updates in the tiny config

    def test_train_meta_from_saved_baselines(self, tiny_cfg, tmp_path, capsys,
                                             baselines):
        bdir = str(tmp_path / "baselines")
        baselines.save(bdir)
        rc = main(["train-meta", "--config", tiny_cfg, "--baselines", bdir,
                   "--out", str(tmp_path)])
        assert rc == 0
        run_dir, _ = run_dir_from(capsys)
        pol = SoftmaxPolicy.load(os.path.join(run_dir, "artifacts", "meta.policy.json"))
        assert pol.is_meta

    def test_train_ego_with_literal_training_dist(self, tiny_cfg, tmp_path,
                                                  policy_files, capsys):
        _, meta_path = policy_files
        rc = main(["train-ego", "--config", tiny_cfg, "--meta", meta_path,
                   "--training", "gaussian(1.0,0.5)", "--out", str(tmp_path)])
        assert rc == 0
        run_dir, _ = run_dir_from(capsys)
        assert os.path.exists(os.path.join(run_dir, "artifacts", "ego.policy.json"))

    def test_evaluate_prints_rates(self, tiny_cfg, tmp_path, policy_files, capsys):
        ego_path, meta_path = policy_files
        rc = main(["evaluate", "--config", tiny_cfg, "--ego", ego_path,
                   "--meta", meta_path, "--out", str(tmp_path)])
        assert rc == 0
        run_dir, out = run_dir_from(capsys)
        assert "success:" in out and "failure (weighted):" in out
        report = json.load(open(os.path.join(run_dir, "artifacts", "eval.json")))
        assert report["n_samples"] == 30
        log = open(os.path.join(run_dir, "artifacts", "episodes.jsonl")).read()
        headers = [l for l in log.splitlines() if '"type":"episode"' in l]
        assert len(headers) == 30  # evaluate logs every episode

    def test_ce_optimize_writes_result(self, tiny_cfg, tmp_path, policy_files, capsys):
        ego_path, meta_path = policy_files
        rc = main(["ce-optimize", "--config", tiny_cfg, "--ego", ego_path,
                   "--meta", meta_path, "--out", str(tmp_path)])
        assert rc == 0
        run_dir, out = run_dir_from(capsys)
        assert "mu* = " in out
        result = json.load(open(os.path.join(run_dir, "artifacts", "result.json")))
        assert result["proposal"].startswith("gaussian(")
        trace = json.load(open(os.path.join(run_dir, "artifacts", "ce_trace.json")))
        assert trace[0]["iteration"] == 0

    def test_benchmarks_all_variants(self, tiny_cfg, tmp_path, capsys):
        rc = main(["benchmarks", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--variants", "GEP,GIS,NEP,CEIS"])
        assert rc == 0
        run_dir, out = run_dir_from(capsys)
        table = open(os.path.join(run_dir, "artifacts", "benchmarks.csv")).read()
        lines = table.splitlines()
        assert lines[0] == "policy,training_distribution,success,collision,timeout"
        assert len(lines) == 5
        assert [l.split(",")[0] for l in lines[1:]] == ["GEP", "GIS", "NEP", "CEIS"]

    def test_ablation_grid(self, tiny_cfg, tmp_path, capsys):
        rc = main(["ablation", "--config", tiny_cfg, "--out", str(tmp_path),
                   "--means", "0.5,1.5", "--sigmas", "0.5"])
        assert rc == 0
        run_dir, _ = run_dir_from(capsys)
        lines = open(os.path.join(run_dir, "artifacts", "ablation.csv")).read().splitlines()
        assert len(lines) == 3

    def test_fit_kde_from_csv(self, tiny_cfg, tmp_path, capsys):
        src = tmp_path / "betas.csv"
        src.write_text("beta\n0.5\n1.0\n1.5\n2.0\n")
        rc = main(["fit-kde", "--config", tiny_cfg, "--input", str(src),
                   "--out", str(tmp_path)])
        assert rc == 0
        run_dir, out = run_dir_from(capsys)
        assert "kde(" in out and "gaussian(" in out
        fit = json.load(open(os.path.join(run_dir, "artifacts", "fit.json")))
        assert fit["n"] == 4
        assert fit["mean"] == pytest.approx(1.25)

    def test_estimate_beta_from_trajectories(self, tiny_cfg, tmp_path,
                                             policy_files, capsys):
        _, meta_path = policy_files
        src = tmp_path / "traj.csv"
        src.write_text("vehicle_id,step,s,v,action_index\n"
                       + "".join(f"car1,{t},{5 + 2 * t}.0,6.0,2\n" for t in range(8))
                       + "".join(f"car2,{t},{3 + 2 * t}.0,7.0,3\n" for t in range(8)))
        rc = main(["estimate-beta", "--config", tiny_cfg, "--trajectories",
                   str(src), "--meta", meta_path, "--out", str(tmp_path)])
        assert rc == 0
        run_dir, out = run_dir_from(capsys)
        assert "car1:" in out and "car2:" in out
        lines = open(os.path.join(run_dir, "artifacts", "betas.csv")).read().splitlines()
        assert lines[0] == "vehicle_id,beta_hat,confidence"
        assert len(lines) == 3


class TestReproducibility:
    def test_pipeline_artifacts_byte_identical(self, tiny_cfg, tmp_path, capsys):
        dirs = []
        for _ in range(2):
            assert main(["pipeline", "--config", tiny_cfg, "--out",
                         str(tmp_path), "--seed", "7"]) == 0
            dirs.append(run_dir_from(capsys)[0])
        ha, hb = _artifact_hashes(dirs[0]), _artifact_hashes(dirs[1])
        assert ha and ha == hb

    def test_jobs_flag_does_not_change_artifacts(self, tiny_cfg, tmp_path, capsys):
        assert main(["pipeline", "--config", tiny_cfg, "--out", str(tmp_path),
                     "--seed", "7"]) == 0
        serial, _ = run_dir_from(capsys)
        assert main(["pipeline", "--config", tiny_cfg, "--out", str(tmp_path),
                     "--seed", "7", "--jobs", "2"]) == 0
        threaded, _ = run_dir_from(capsys)
        assert _artifact_hashes(serial) == _artifact_hashes(threaded)
