"""Cross-entropy proposal optimization and importance-weighted evaluation.

``ce_optimize`` walks a Gaussian proposal mean toward the low-reward region of
an objective: each iteration draws preference values, scores one episode per
draw, refits the mean to the samples whose reward falls in the bottom elite
quantile (inclusive of boundary ties), and stops when the mean moves less
than the convergence threshold.

``evaluate_is`` estimates naturalistic outcome rates from episodes sampled
under an arbitrary proposal: each episode's outcome indicator is multiplied by
the uncapped likelihood ratio p_naturalistic / p_proposal at its preference
value, giving unbiased rate estimates regardless of the proposal.
"""

import math
from dataclasses import dataclass

import numpy as np

from .distributions import density, likelihood_ratio, sample, to_literal_or_repr
from .errors import ConfigError, InvariantError, SupportCoverageError
from .seeding import spawn_seeds, substream
from .simulator import rollout


@dataclass
class CeConfig:
    mu0: float
    sigma: float = 0.5
    n_ce: int = 500
    elite_quantile: float = 0.10
    threshold: float = 0.01
    max_iters: int = 50
    seed: int = 0
    repeats: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"ce sigma must be > 0, got {self.sigma}")
        if not 0 < self.elite_quantile < 1:
            raise ConfigError(
                f"elite quantile must be in (0, 1), got {self.elite_quantile}")
        if not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise ConfigError(
                f"convergence threshold must be positive and finite, got {self.threshold}")
        if self.n_ce < 1:
            raise ConfigError(f"n_ce must be >= 1, got {self.n_ce}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")


def ce_optimize(objective, cfg: CeConfig):
    """Minimize-seeking CE iteration; returns (mu_star, trace).

    ``objective(beta, seed) -> reward`` is called once per (draw, repeat);
    repeats average out episode noise at the same beta. The trace holds one
    dict per iteration with the incoming mean, elite statistics, and the
    refitted mean.
    """
    mu = float(cfg.mu0)
    trace = []
    for it in range(cfg.max_iters):
        rng = substream(cfg.seed, "ce", "betas", str(it))
        betas = rng.normal(mu, cfg.sigma, size=cfg.n_ce)
        seeds = spawn_seeds(cfg.seed, cfg.n_ce * cfg.repeats, "ce", "episodes", str(it))
        rewards = np.empty(cfg.n_ce)
        for i, b in enumerate(betas):
            total = 0.0
            for r in range(cfg.repeats):
                total += float(objective(float(b), int(seeds[i * cfg.repeats + r])))
            rewards[i] = total / cfg.repeats
        threshold_reward = float(np.quantile(rewards, cfg.elite_quantile))
        elite = rewards <= threshold_reward  # inclusive: boundary ties all enter
        mu_next = float(betas[elite].mean())
        trace.append({
            "iteration": it,
            "mu": mu,
            "elite_mean_reward": float(rewards[elite].mean()),
            "elite_mean": mu_next,
            "n_elite": int(elite.sum()),
        })
        converged = abs(mu_next - mu) < cfg.threshold
        mu = mu_next
        if converged:
            break
    return mu, trace


@dataclass
class EvalReport:
    """Importance-weighted outcome rates with weight diagnostics.

    ``rates`` maps success/collision/timeout/failure to the weighted rate;
    ``stds`` holds the per-episode standard deviation (ddof=0) of each
    weighted indicator; ``raw_rates`` are the unweighted sample fractions.
    """

    proposal: str
    naturalistic: str
    n_samples: int
    rates: dict
    stds: dict
    raw_rates: dict
    mean_weight: float
    max_weight: float
    ess_max_ratio: float
    ess_squared: float

    def __post_init__(self):
        raw_sum = sum(self.raw_rates[k] for k in ("success", "collision", "timeout"))
        if abs(raw_sum - 1.0) > 1e-12:
            raise InvariantError(f"unweighted outcome rates sum to {raw_sum}, not 1")
        for key, rate in self.rates.items():
            if not 0.0 <= rate <= self.max_weight + 1e-12:
                raise InvariantError(
                    f"weighted {key} rate {rate} outside [0, max weight {self.max_weight}]")

    @property
    def failure_rate(self):
        return self.rates["failure"]

    def to_dict(self):
        return {
            "proposal": self.proposal,
            "naturalistic": self.naturalistic,
            "n_samples": self.n_samples,
            "rates": dict(self.rates),
            "stds": dict(self.stds),
            "raw_rates": dict(self.raw_rates),
            "mean_weight": self.mean_weight,
            "max_weight": self.max_weight,
            "ess_max_ratio": self.ess_max_ratio,
            "ess_squared": self.ess_squared,
        }

    def csv_cells(self):
        """The success/collision/timeout cells of a benchmark table row."""
        return [
            f"{self.rates[k]:.6f} ± {self.stds[k]:.6f}"
            for k in ("success", "collision", "timeout")
        ]


def make_episode_runner(scenario, ego, social_policy, discount=0.99, collector=None):
    """Build the default objective: one seeded episode per call.

    Returns a callable (beta, seed) -> (outcome, discounted ego return). A
    shared beta is used for every social vehicle. ``collector`` (a list, if
    given) receives each EpisodeRecord for logging.
    """

    def run(beta, seed):
        record = rollout(scenario, ego, social_policy,
                         [beta] * scenario.n_social, seed, discount)
        if collector is not None:
            collector.append(record)
        return record.outcome, record.discounted_return

    return run


def reward_objective(runner):
    """Adapt an episode runner to the scalar objective ce_optimize expects."""

    def objective(beta, seed):
        return runner(beta, seed)[1]

    return objective


def evaluate_is(episode_runner, p_evaluation, p_naturalistic, n_samples, seed):
    """Estimate naturalistic outcome rates by importance sampling.

    Draws ``n_samples`` preference values from the proposal, runs one episode
    each, and weights every outcome indicator by the uncapped ratio
    p_naturalistic / p_evaluation. Failure means collision or timeout.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    # Audit the bulk of the naturalistic support before sampling: a proposal
    # with no density there yields all-zero weights and a silently wrong
    # zero estimate rather than a loud per-sample ratio error.
    lo, hi = p_naturalistic.support_pad(3.0)
    grid = np.linspace(lo, hi, 64)
    uncovered = (density(p_naturalistic, grid) > 0.0) & (density(p_evaluation, grid) == 0.0)
    if np.any(uncovered):
        where = grid[int(np.argmax(uncovered))]
        raise SupportCoverageError(
            f"proposal does not cover naturalistic support at beta={where:.3f}")
    rng = substream(seed, "eval", "betas")
    betas = np.array([sample(p_evaluation, rng) for _ in range(n_samples)])
    weights = np.array([
        likelihood_ratio(p_naturalistic, p_evaluation, float(b)) for b in betas])
    seeds = spawn_seeds(seed, n_samples, "eval", "episodes")
    outcomes = [episode_runner(float(b), int(s))[0] for b, s in zip(betas, seeds)]

    rates, stds, raw = {}, {}, {}
    for key in ("success", "collision", "timeout", "failure"):
        if key == "failure":
            ind = np.array([o != "success" for o in outcomes], dtype=float)
        else:
            ind = np.array([o == key for o in outcomes], dtype=float)
        x = ind * weights
        rates[key] = float(x.mean())
        stds[key] = float(x.std())
        raw[key] = float(ind.mean())
    # All weights can still be zero when every draw lands outside the
    # naturalistic support; the zero estimate is valid, the ESS is 0.
    w_sum = float(weights.sum())
    w_max = float(weights.max())
    w_sq = float((weights ** 2).sum())
    return EvalReport(
        proposal=to_literal_or_repr(p_evaluation),
        naturalistic=to_literal_or_repr(p_naturalistic),
        n_samples=n_samples,
        rates=rates, stds=stds, raw_rates=raw,
        mean_weight=float(weights.mean()),
        max_weight=w_max,
        ess_max_ratio=w_sum / w_max if w_max > 0.0 else 0.0,
        ess_squared=w_sum ** 2 / w_sq if w_sq > 0.0 else 0.0,
    )
