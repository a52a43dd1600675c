"""End-to-end orchestration: guide training, iterative ego refinement with
evaluation-proposal optimization, and the benchmark/ablation harnesses.

One run proceeds as: train the social baselines and the meta policy once;
then for k = 1..K train the ego on p_{k-1} with importance weights, find the
failure-focused evaluation mean mu*_k by cross-entropy search, evaluate, and
augment the training mixture with an equally weighted component at mu*_k.

All stage seeds derive from the master seed through named substreams, so
adding a variant or an iteration never perturbs the randomness of the others.
Every evaluation in a run shares one seed stream: paired draws keep
variant-to-variant and iteration-to-iteration comparisons low-variance.
"""

import csv
import json
import os
from collections.abc import Iterable
from dataclasses import dataclass, field, replace

from .ce_eval import CeConfig, EvalReport, ce_optimize, evaluate_is, make_episode_runner, reward_objective
from .distributions import Gaussian, Uniform, make_gmm, to_literal_or_repr
from .errors import ConfigError, TjunctionError
from .policies import (
    DEFAULT_BASELINE_BETAS,
    DEFAULT_NEIGHBOR_RADIUS,
    BaselineSet,
    SoftmaxPolicy,
)
from .seeding import spawn_seeds
from .simulator import ScenarioConfig
from .training import TrainConfig, train_ego, train_meta, train_social

BENCHMARK_VARIANTS = ("GEP", "GIS", "NEP", "CEIS")
ABLATION_MEANS = (-0.5, 0.5, 1.5, 2.5)
ABLATION_SIGMAS = (0.5, 0.75, 1.0)
CSV_COLUMNS = ("policy", "training_distribution", "success", "collision", "timeout")


@dataclass
class PipelineConfig:
    """Inputs for one full run; distributions are distribution objects."""

    p_naturalistic: object
    p0: object
    mu0: float = 0.5
    sigma: float = 0.5
    n_samples: int = 500
    n_iterations: int = 1
    beta_range: tuple = (-1.0, 3.0)
    baseline_betas: tuple = DEFAULT_BASELINE_BETAS
    neighbor_radius: float = DEFAULT_NEIGHBOR_RADIUS
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    social_cfg: TrainConfig = field(default_factory=lambda: TrainConfig(updates=120))
    meta_cfg: TrainConfig = field(default_factory=lambda: TrainConfig(updates=300, lambda_reg=20.0))
    ego_cfg: TrainConfig = field(default_factory=lambda: TrainConfig(updates=250, batch=8, lr=0.5))
    ce_cfg: CeConfig = field(default_factory=lambda: CeConfig(mu0=0.5))
    seed: int = 0
    warm_start: bool = True
    episode_log_limit: int = 100
    out_dir: str = ""

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be >= 1")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.beta_range[0] < self.beta_range[1]:
            raise ConfigError("beta_range must satisfy beta_min < beta_max")
        for name in ("p_naturalistic", "p0"):
            dist = getattr(self, name)
            if not hasattr(dist, "density"):
                raise ConfigError(f"{name} is not a distribution")


@dataclass
class GuideSet:
    """The frozen social-side policies every ego variant trains against."""

    baselines: BaselineSet
    meta: SoftmaxPolicy

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.baselines.save(os.path.join(out_dir, "baselines"))
        self.meta.save(os.path.join(out_dir, "meta.policy.json"))

    @classmethod
    def load(cls, out_dir):
        return cls(
            baselines=BaselineSet.load(os.path.join(out_dir, "baselines")),
            meta=SoftmaxPolicy.load(os.path.join(out_dir, "meta.policy.json")),
        )


@dataclass
class IterationResult:
    mu: float
    ego: SoftmaxPolicy
    report: EvalReport
    naturalistic_report: EvalReport
    ce_trace: list


@dataclass
class PipelineResult:
    ego: SoftmaxPolicy
    iterations: list
    distributions: list
    guides: GuideSet

    @property
    def mu_sequence(self):
        return [it.mu for it in self.iterations]


def _stage_seed(master, *names):
    return int(spawn_seeds(master, 1, *names)[0])


class _Stage:
    """Context that tags any framework error with stage name and iteration."""

    def __init__(self, name, iteration=None):
        self.label = name if iteration is None else f"{name} (iteration {iteration})"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, TjunctionError):
            raise type(exc)(f"stage {self.label}: {exc}") from exc
        if isinstance(exc, Exception):
            raise RuntimeError(f"stage {self.label} failed: {exc}") from exc
        return False


def _write_json(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_csv(path, columns, rows):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)
    os.replace(tmp, path)


class _CappedLog(list):
    """Episode sink that keeps at most ``limit`` records (-1 keeps all)."""

    def __init__(self, limit):
        super().__init__()
        self.limit = limit

    def append(self, record):
        if self.limit < 0 or len(self) < self.limit:
            super().append(record)


def _write_episode_log(path, records):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_jsonl())
            fh.write("\n")
    os.replace(tmp, path)


def train_guides(cfg: PipelineConfig) -> GuideSet:
    """Train the per-beta social baselines, then the meta policy against them."""
    policies = []
    for beta_bar in cfg.baseline_betas:
        with _Stage(f"social-training beta={beta_bar:g}"):
            social_cfg = replace(cfg.social_cfg,
                                 seed=_stage_seed(cfg.seed, "social", f"{beta_bar:g}"))
            policy, _ = train_social(beta_bar, social_cfg, cfg.scenario)
            policies.append(policy)
    baselines = BaselineSet(cfg.baseline_betas, tuple(policies), cfg.neighbor_radius)
    with _Stage("meta-training"):
        meta_cfg = replace(cfg.meta_cfg, seed=_stage_seed(cfg.seed, "meta"))
        meta, _ = train_meta(baselines, cfg.beta_range, meta_cfg, cfg.scenario)
    return GuideSet(baselines, meta)


def _trained_eval(cfg, guides, p_training, use_is, train_seed, init=None,
                  label="", out_dir=""):
    """Train one weighted ego and evaluate it naturalistically.

    Shared by benchmark variants and ablation cells so that identical
    configuration and seeds produce identical metrics through either entry.
    """
    ego_cfg = replace(cfg.ego_cfg, seed=train_seed)
    ego, history = train_ego(guides.meta, p_training, cfg.p_naturalistic, use_is,
                             ego_cfg, cfg.scenario, init=init)
    report, records = _evaluate(cfg, guides, ego, cfg.p_naturalistic)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ego.save(os.path.join(out_dir, "ego.policy.json"))
        _write_json(os.path.join(out_dir, "eval_naturalistic.json"), report.to_dict())
        _write_json(os.path.join(out_dir, "history.json"), history)
        _write_episode_log(os.path.join(out_dir, "episodes.jsonl"), records)
    return ego, report


def _evaluate(cfg, guides, ego, p_evaluation):
    """Evaluate one ego; the seed stream is shared by every evaluation in a run."""
    records = _CappedLog(cfg.episode_log_limit)
    runner = make_episode_runner(cfg.scenario, ego, guides.meta,
                                 discount=cfg.ego_cfg.gamma,
                                 collector=records if cfg.episode_log_limit != 0 else None)
    report = evaluate_is(runner, p_evaluation, cfg.p_naturalistic,
                         cfg.n_samples, _stage_seed(cfg.seed, "evaluation"))
    return report, records


def run_pipeline(cfg: PipelineConfig, guides: GuideSet | None = None) -> PipelineResult:
    """Run K iterations of ego training, CE proposal search, and mixture growth."""
    out = cfg.out_dir
    if out:
        os.makedirs(out, exist_ok=True)
    if guides is None:
        guides = train_guides(cfg)
        if out:
            guides.save(os.path.join(out, "guides"))

    iterations = []
    distributions = []
    mus = []
    p_train = cfg.p0
    mu_prev = cfg.mu0
    ego = None
    for k in range(1, cfg.n_iterations + 1):
        with _Stage("ego-training", k):
            ego_cfg = replace(cfg.ego_cfg, seed=_stage_seed(cfg.seed, "ego", str(k)))
            init = ego if cfg.warm_start else None
            ego, history = train_ego(guides.meta, p_train, cfg.p_naturalistic, True,
                                     ego_cfg, cfg.scenario, init=init)
        runner = make_episode_runner(cfg.scenario, ego, guides.meta,
                                     discount=cfg.ego_cfg.gamma)
        with _Stage("ce-optimize", k):
            ce_cfg = replace(cfg.ce_cfg, mu0=mu_prev, sigma=cfg.sigma,
                             seed=_stage_seed(cfg.seed, "ce", str(k)))
            mu_k, ce_trace = ce_optimize(reward_objective(runner), ce_cfg)
        with _Stage("evaluation", k):
            report, records = _evaluate(cfg, guides, ego, Gaussian(mu_k, cfg.sigma))
            nat_report, nat_records = _evaluate(cfg, guides, ego, cfg.p_naturalistic)
        with _Stage("mixture-update", k):
            mus.append(mu_k)
            p_next = make_gmm(mus, cfg.sigma)
        iterations.append(IterationResult(mu_k, ego, report, nat_report, ce_trace))
        distributions.append(p_next)

        if out:
            it_dir = os.path.join(out, "iterations", f"k{k:02d}")
            os.makedirs(it_dir, exist_ok=True)
            ego.save(os.path.join(it_dir, "ego.policy.json"))
            _write_json(os.path.join(it_dir, "ce_trace.json"), ce_trace)
            _write_json(os.path.join(it_dir, "eval_proposal.json"), report.to_dict())
            _write_json(os.path.join(it_dir, "eval_naturalistic.json"), nat_report.to_dict())
            _write_json(os.path.join(it_dir, "history.json"), history)
            _write_episode_log(os.path.join(it_dir, "episodes.jsonl"), records)
            _write_episode_log(os.path.join(it_dir, "episodes_naturalistic.jsonl"), nat_records)

        p_train = p_next
        mu_prev = mu_k

    result = PipelineResult(ego, iterations, distributions, guides)
    if out:
        _write_json(os.path.join(out, "pipeline_trace.json"), {
            "iterations": cfg.n_iterations,
            "sigma": cfg.sigma,
            "mu_sequence": result.mu_sequence,
            "distributions": [to_literal_or_repr(d) for d in distributions],
            "success_naturalistic": [it.naturalistic_report.rates["success"]
                                     for it in iterations],
            "failure_weighted": [it.report.failure_rate for it in iterations],
        })
    return result


def _benchmark_variant(cfg, guides, name):
    uniform = Uniform(cfg.beta_range[0], cfg.beta_range[1])
    out = os.path.join(cfg.out_dir, "variants", name.lower()) if cfg.out_dir else ""
    if name == "GEP":
        _, report = _trained_eval(cfg, guides, uniform, False,
                                  _stage_seed(cfg.seed, "variant", name), out_dir=out)
        return report, uniform
    if name == "GIS":
        _, report = _trained_eval(cfg, guides, uniform, True,
                                  _stage_seed(cfg.seed, "variant", name), out_dir=out)
        return report, uniform
    if name == "NEP":
        _, report = _trained_eval(cfg, guides, cfg.p_naturalistic, False,
                                  _stage_seed(cfg.seed, "variant", name), out_dir=out)
        return report, cfg.p_naturalistic
    if name == "CEIS":
        sub = replace(cfg, out_dir=out)
        result = run_pipeline(sub, guides=guides)
        final = result.iterations[-1]
        trained_on = cfg.p0 if cfg.n_iterations == 1 else result.distributions[-2]
        return final.naturalistic_report, trained_on
    raise ConfigError(f"unknown benchmark variant '{name}'")


def run_benchmarks(cfg: PipelineConfig, variants: Iterable[str] = BENCHMARK_VARIANTS,
                   guides: GuideSet | None = None):
    """Train and evaluate the requested variants against shared guide policies.

    Returns the table rows; writes benchmarks.csv when cfg.out_dir is set.
    Every variant sees the same evaluation seed stream, so rows are paired.
    """
    variants = tuple(variants)
    if not variants:
        raise ConfigError("no benchmark variants requested")
    for name in variants:
        if name not in BENCHMARK_VARIANTS:
            raise ConfigError(f"unknown benchmark variant '{name}'")
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
    if guides is None:
        guides = train_guides(cfg)
        if cfg.out_dir:
            guides.save(os.path.join(cfg.out_dir, "guides"))

    rows = []
    for name in variants:
        with _Stage(f"benchmark {name}"):
            report, trained_on = _benchmark_variant(cfg, guides, name)
        rows.append((name, to_literal_or_repr(trained_on), *report.csv_cells()))
    if cfg.out_dir:
        _write_csv(os.path.join(cfg.out_dir, "benchmarks.csv"), CSV_COLUMNS, rows)
    return rows


def run_ablation(cfg: PipelineConfig, means: Iterable[float] = ABLATION_MEANS,
                 sigmas: Iterable[float] = ABLATION_SIGMAS,
                 guides: GuideSet | None = None):
    """Sweep Gaussian training distributions (no CE, no mixture) with weights.

    Returns one row per (mean, sigma) cell; writes ablation.csv when
    cfg.out_dir is set.
    """
    means = tuple(means)
    sigmas = tuple(sigmas)
    if not means or not sigmas:
        raise ConfigError("empty ablation grid")
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
    if guides is None:
        guides = train_guides(cfg)
        if cfg.out_dir:
            guides.save(os.path.join(cfg.out_dir, "guides"))

    rows = []
    for mu in means:
        for sigma in sigmas:
            with _Stage(f"ablation mu={mu:g} sigma={sigma:g}"):
                p_training = Gaussian(mu, sigma)
                out = (os.path.join(cfg.out_dir, "cells", f"mu{mu:g}_sigma{sigma:g}")
                       if cfg.out_dir else "")
                _, report = _trained_eval(
                    cfg, guides, p_training, True,
                    _stage_seed(cfg.seed, "ablation", f"{mu:g}", f"{sigma:g}"),
                    out_dir=out)
            rows.append((f"mu={mu:g}", to_literal_or_repr(p_training),
                         *report.csv_cells()))
    if cfg.out_dir:
        _write_csv(os.path.join(cfg.out_dir, "ablation.csv"), CSV_COLUMNS, rows)
    return rows
