"""Command-line entry point.

Every invocation creates a fresh run directory under the output root
(``--out``, else $TJUNCTION_OUT, else ./runs):

    <root>/<command>-<UTC timestamp>-<seq>/
        manifest.json     run record: config snapshot, seed, artifacts, timings
        artifacts/        everything the command produced

Existing run directories are never mutated. Exit codes: 0 success, 2 bad
config, 3 missing artifact, 4 proposal support failure, 5 internal invariant
breach.
"""

import argparse
import os
import sys
import time
from datetime import datetime, timezone

from . import __version__
from .ce_eval import ce_optimize, evaluate_is, make_episode_runner, reward_objective
from .config import apply_overrides, build_pipeline_config, harness_options, read_config, resolve_preset
from .datafit import (
    DEFAULT_BETA_GRID,
    estimate_beta,
    fit_naturalistic,
    ingest_trajectories,
    write_beta_estimates,
)
from .distributions import Gaussian, parse_literal, read_beta_csv, to_literal_or_repr
from .errors import MissingArtifactError, TjunctionError
from .pipeline import (
    GuideSet,
    run_ablation,
    run_benchmarks,
    run_pipeline,
    train_guides,
    _write_episode_log,
    _write_json,
    _CappedLog,
    _stage_seed,
)
from .policies import BaselineSet, SoftmaxPolicy
from .training import train_ego, train_meta, train_social

COMMANDS = ("train-social", "train-meta", "train-ego", "ce-optimize", "evaluate",
            "pipeline", "benchmarks", "ablation", "fit-kde", "estimate-beta")


class _Timings(dict):
    """Named wall-clock stage durations, seconds."""

    def stage(self, name):
        timings = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timings[name] = round(time.perf_counter() - self.t0, 3)
                return False

        return _Span()


def _require_file(path, what):
    if not path:
        raise MissingArtifactError(f"missing required {what}")
    if not os.path.exists(path):
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _require_dir(path, what):
    if not path:
        raise MissingArtifactError(f"missing required {what}")
    if not os.path.isdir(path):
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _new_run_dir(root, command):
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    for seq in range(1000):
        candidate = os.path.join(root, f"{command}-{stamp}-{seq:03d}")
        try:
            os.makedirs(candidate)
            return candidate
        except FileExistsError:
            continue
    raise TjunctionError(f"cannot allocate a run directory under {root}")


def _load_guides(args, cfg, art_dir, timings):
    """Guide policies from --guides, else trained fresh (and persisted)."""
    if getattr(args, "guides", None):
        return GuideSet.load(_require_dir(args.guides, "guides directory"))
    with timings.stage("train-guides"):
        guides = train_guides(cfg)
    guides.save(os.path.join(art_dir, "guides"))
    return guides


def _parse_dist(text, what):
    if not text:
        raise MissingArtifactError(f"missing required {what}")
    return parse_literal(text, base_dir=os.getcwd())


def _cmd_train_social(args, cfg, art_dir, timings):
    from dataclasses import replace
    tc = replace(cfg.social_cfg, seed=_stage_seed(cfg.seed, "social", f"{args.beta:g}"))
    with timings.stage("train-social"):
        policy, history = train_social(args.beta, tc, cfg.scenario)
    policy.save(os.path.join(art_dir, "social.policy.json"))
    _write_json(os.path.join(art_dir, "history.json"), history)


def _cmd_train_meta(args, cfg, art_dir, timings):
    from dataclasses import replace
    baselines = BaselineSet.load(_require_dir(args.baselines, "baselines directory"))
    tc = replace(cfg.meta_cfg, seed=_stage_seed(cfg.seed, "meta"))
    with timings.stage("train-meta"):
        meta, history = train_meta(baselines, cfg.beta_range, tc, cfg.scenario)
    meta.save(os.path.join(art_dir, "meta.policy.json"))
    _write_json(os.path.join(art_dir, "history.json"), history)


def _cmd_train_ego(args, cfg, art_dir, timings):
    from dataclasses import replace
    meta = SoftmaxPolicy.load(_require_file(args.meta, "meta policy"))
    p_training = _parse_dist(args.training, "training distribution") \
        if args.training else cfg.p0
    init = SoftmaxPolicy.load(_require_file(args.init, "initial policy")) \
        if args.init else None
    tc = replace(cfg.ego_cfg, seed=_stage_seed(cfg.seed, "ego", "1"))
    with timings.stage("train-ego"):
        ego, history = train_ego(meta, p_training, cfg.p_naturalistic,
                                 not args.unweighted, tc, cfg.scenario, init=init)
    ego.save(os.path.join(art_dir, "ego.policy.json"))
    _write_json(os.path.join(art_dir, "history.json"), history)


def _cmd_ce_optimize(args, cfg, art_dir, timings):
    from dataclasses import replace
    ego = SoftmaxPolicy.load(_require_file(args.ego, "ego policy"))
    meta = SoftmaxPolicy.load(_require_file(args.meta, "meta policy"))
    runner = make_episode_runner(cfg.scenario, ego, meta, discount=cfg.ego_cfg.gamma)
    ce = replace(cfg.ce_cfg, mu0=cfg.mu0, sigma=cfg.sigma,
                 seed=_stage_seed(cfg.seed, "ce", "1"))
    with timings.stage("ce-optimize"):
        mu, trace = ce_optimize(reward_objective(runner), ce)
    _write_json(os.path.join(art_dir, "ce_trace.json"), trace)
    _write_json(os.path.join(art_dir, "result.json"),
                {"mu": mu, "proposal": to_literal_or_repr(Gaussian(mu, cfg.sigma))})
    print(f"mu* = {mu:.6f}")


def _cmd_evaluate(args, cfg, art_dir, timings):
    ego = SoftmaxPolicy.load(_require_file(args.ego, "ego policy"))
    meta = SoftmaxPolicy.load(_require_file(args.meta, "meta policy"))
    proposal = _parse_dist(args.proposal, "proposal distribution") \
        if args.proposal else cfg.p_naturalistic
    records = _CappedLog(-1)
    runner = make_episode_runner(cfg.scenario, ego, meta,
                                 discount=cfg.ego_cfg.gamma, collector=records)
    with timings.stage("evaluate"):
        report = evaluate_is(runner, proposal, cfg.p_naturalistic,
                             cfg.n_samples, _stage_seed(cfg.seed, "evaluation"))
    _write_json(os.path.join(art_dir, "eval.json"), report.to_dict())
    _write_episode_log(os.path.join(art_dir, "episodes.jsonl"), records)
    for key in ("success", "collision", "timeout"):
        print(f"{key}: {report.rates[key]:.6f} ± {report.stds[key]:.6f}")
    print(f"failure (weighted): {report.failure_rate:.6f}")


def _cmd_pipeline(args, cfg, art_dir, timings):
    from dataclasses import replace
    cfg = replace(cfg, out_dir=art_dir)
    guides = GuideSet.load(_require_dir(args.guides, "guides directory")) \
        if args.guides else None
    with timings.stage("pipeline"):
        result = run_pipeline(cfg, guides=guides)
    print("mu sequence:", " ".join(f"{m:.4f}" for m in result.mu_sequence))
    for k, it in enumerate(result.iterations, start=1):
        print(f"k={k}: naturalistic success "
              f"{it.naturalistic_report.rates['success']:.4f}, "
              f"weighted failure {it.report.failure_rate:.6f}")


def _cmd_benchmarks(args, cfg, art_dir, timings):
    from dataclasses import replace
    cfg = replace(cfg, out_dir=art_dir)
    variants = tuple(v.strip() for v in args.variants.split(",")) \
        if args.variants else harness_options(args._raw)["variants"]
    guides = GuideSet.load(_require_dir(args.guides, "guides directory")) \
        if args.guides else None
    with timings.stage("benchmarks"):
        rows = run_benchmarks(cfg, variants, guides=guides)
    for row in rows:
        print(",".join(row))


def _cmd_ablation(args, cfg, art_dir, timings):
    from dataclasses import replace
    cfg = replace(cfg, out_dir=art_dir)
    opts = harness_options(args._raw)
    means = tuple(float(x) for x in args.means.split(",")) if args.means else opts["means"]
    sigmas = tuple(float(x) for x in args.sigmas.split(",")) if args.sigmas else opts["sigmas"]
    guides = GuideSet.load(_require_dir(args.guides, "guides directory")) \
        if args.guides else None
    with timings.stage("ablation"):
        rows = run_ablation(cfg, means, sigmas, guides=guides)
    for row in rows:
        print(",".join(row))


def _cmd_fit_kde(args, cfg, art_dir, timings):
    path = _require_file(args.input, "beta sample file")
    betas = read_beta_csv(path)
    with timings.stage("fit-kde"):
        fit = fit_naturalistic(betas, bandwidth=args.bandwidth)
    payload = {
        "n": int(betas.size),
        "bandwidth": fit.kde.bandwidth,
        "kde_literal": f"kde({path},{fit.kde.bandwidth!r})",
        "gaussian_literal": to_literal_or_repr(fit.gaussian),
        "mean": fit.gaussian.mu,
        "std": fit.gaussian.sigma,
    }
    _write_json(os.path.join(art_dir, "fit.json"), payload)
    print(payload["kde_literal"])
    print(payload["gaussian_literal"])


def _cmd_estimate_beta(args, cfg, art_dir, timings):
    meta = SoftmaxPolicy.load(_require_file(args.meta, "meta policy"))
    trajectories = ingest_trajectories(
        _require_file(args.trajectories, "trajectory file"), cfg.scenario)
    rows = []
    with timings.stage("estimate-beta"):
        for traj in trajectories:
            rows.append((traj.vehicle_id, estimate_beta(traj, meta, DEFAULT_BETA_GRID)))
    write_beta_estimates(os.path.join(art_dir, "betas.csv"), rows)
    for vid, est in rows:
        flag = " (low confidence)" if est.low_confidence else ""
        print(f"{vid}: {est.beta_hat:.3f}{flag}")


_HANDLERS = {
    "train-social": _cmd_train_social,
    "train-meta": _cmd_train_meta,
    "train-ego": _cmd_train_ego,
    "ce-optimize": _cmd_ce_optimize,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
    "benchmarks": _cmd_benchmarks,
    "ablation": _cmd_ablation,
    "fit-kde": _cmd_fit_kde,
    "estimate-beta": _cmd_estimate_beta,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tjunction",
        description="Importance-weighted training and evaluation for a "
                    "T-intersection driving simulator.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default="synthetic",
                       help="preset name or config file (default: synthetic)")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", default=None,
                       help="output root (default: $TJUNCTION_OUT or ./runs)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker cap for episode batches")
        p.add_argument("--label", default="", help="free-form run label")

    p = sub.add_parser("train-social", help="train one fixed-beta social policy")
    common(p)
    p.add_argument("--beta", type=float, required=True)

    p = sub.add_parser("train-meta", help="train the beta-conditioned meta policy")
    common(p)
    p.add_argument("--baselines", required=True, help="baseline policy directory")

    p = sub.add_parser("train-ego", help="train an ego policy")
    common(p)
    p.add_argument("--meta", required=True, help="meta policy file")
    p.add_argument("--training", default="", help="training distribution literal")
    p.add_argument("--unweighted", action="store_true",
                   help="disable importance weighting")
    p.add_argument("--init", default="", help="warm-start ego policy file")

    p = sub.add_parser("ce-optimize", help="cross-entropy search for the failure mean")
    common(p)
    p.add_argument("--ego", required=True)
    p.add_argument("--meta", required=True)

    p = sub.add_parser("evaluate", help="importance-weighted evaluation of an ego")
    common(p)
    p.add_argument("--ego", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--proposal", default="", help="proposal distribution literal")

    p = sub.add_parser("pipeline", help="full iterative training/evaluation run")
    common(p)
    p.add_argument("--guides", default="", help="reuse a saved guides directory")

    p = sub.add_parser("benchmarks", help="train and compare ego variants")
    common(p)
    p.add_argument("--variants", default="", help="comma list, e.g. GEP,GIS,NEP,CEIS")
    p.add_argument("--guides", default="", help="reuse a saved guides directory")

    p = sub.add_parser("ablation", help="sweep Gaussian training distributions")
    common(p)
    p.add_argument("--means", default="", help="comma list of means")
    p.add_argument("--sigmas", default="", help="comma list of sigmas")
    p.add_argument("--guides", default="", help="reuse a saved guides directory")

    p = sub.add_parser("fit-kde", help="fit the naturalistic distribution from betas")
    common(p)
    p.add_argument("--input", required=True, help="CSV of beta values")
    p.add_argument("--bandwidth", default="auto")

    p = sub.add_parser("estimate-beta", help="per-vehicle beta from trajectories")
    common(p)
    p.add_argument("--trajectories", required=True, help="trajectory CSV")
    p.add_argument("--meta", required=True, help="meta policy file")

    return parser


def _run(args):
    raw = read_config(args.config)
    raw = apply_overrides(raw, args.overrides)
    args._raw = raw
    base_dir = os.path.dirname(os.path.abspath(resolve_preset(args.config)))

    out_root = args.out or os.environ.get("TJUNCTION_OUT") or "runs"
    run_dir = _new_run_dir(out_root, args.command)
    art_dir = os.path.join(run_dir, "artifacts")
    os.makedirs(art_dir)

    cfg = build_pipeline_config(raw, seed=args.seed, base_dir=base_dir)
    if args.jobs is not None:
        from dataclasses import replace
        cfg = replace(cfg,
                      social_cfg=replace(cfg.social_cfg, jobs=args.jobs),
                      meta_cfg=replace(cfg.meta_cfg, jobs=args.jobs),
                      ego_cfg=replace(cfg.ego_cfg, jobs=args.jobs))

    timings = _Timings()
    t0 = time.perf_counter()
    _HANDLERS[args.command](args, cfg, art_dir, timings)
    timings["total"] = round(time.perf_counter() - t0, 3)

    artifacts = []
    for dirpath, _, filenames in os.walk(art_dir):
        for name in filenames:
            rel = os.path.relpath(os.path.join(dirpath, name), run_dir)
            artifacts.append(rel)
    manifest = {
        "tool_version": __version__,
        "command": args.command,
        "label": args.label,
        "seed": args.seed,
        "config_source": args.config,
        "config": dict(sorted(raw.items())),
        "overrides": list(args.overrides),
        "artifacts": sorted(artifacts),
        "timings": timings,
    }
    _write_json(os.path.join(run_dir, "manifest.json"), manifest)
    print(f"run directory: {run_dir}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except TjunctionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
