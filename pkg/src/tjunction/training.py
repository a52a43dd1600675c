"""Policy-gradient trainers for social baselines, the meta policy, and the ego.

All trainers run REINFORCE. Social and meta training subtract a per-state-bin
moving-average return baseline; the per-episode gradient contribution is
w * sum_t (G - b(bin_t)) * grad ln pi(a_t | bin_t), where G is the episode's
discounted return for the acting vehicle and w is an importance weight
(1 unless ego training runs with weighting enabled). Ego training instead
standardizes episode returns within each batch ((G - mean) / std); the ego
starts parked, so return differences early in training are tiny against the
step-penalty floor and a fixed-scale baseline learns too slowly.

Gradient assembly is vectorized over all steps of a batch; the same code path
serves gradient computation and the surrogate objective used by the
finite-difference correctness test.
"""

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import N_STATE_BINS
from .distributions import likelihood_ratio, sample
from .errors import ConfigError
from .policies import (
    BaselineSet,
    FeatureMap,
    SoftmaxPolicy,
    meta_policy,
    nearest_baselines,
    tabular_policy,
)
from .seeding import spawn_seeds, substream
from .simulator import rollout

REPLAY_CAPACITY = 20_000


@dataclass
class TrainConfig:
    batch: int = 32
    updates: int = 100
    lr: float = 0.05
    gamma: float = 0.99
    lambda_reg: float = 1.0
    reg_batch: int = 256
    cap: float = 20.0
    seed: int = 0
    baseline_eta: float = 0.1
    jobs: int = 1

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.updates < 0:
            raise ConfigError(f"updates must be >= 0, got {self.updates}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.lambda_reg < 0:
            raise ConfigError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.reg_batch < 1:
            raise ConfigError(f"reg_batch must be >= 1, got {self.reg_batch}")
        if self.cap < 1:
            raise ConfigError(f"weight cap must be >= 1, got {self.cap}")
        if not 0 < self.baseline_eta <= 1:
            raise ConfigError(f"baseline_eta must be in (0, 1], got {self.baseline_eta}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


@dataclass
class EpisodeSample:
    """One vehicle-episode prepared for gradient assembly.

    ``advantages`` are frozen at collection time (return minus the state-bin
    baseline), so the surrogate objective is an ordinary function of theta.
    """

    bins: np.ndarray
    actions: np.ndarray
    advantages: np.ndarray
    weight: float = 1.0
    beta: float = None  # feature beta for meta policies, None for tabular


def _flatten_samples(policy, samples):
    A = policy.n_actions
    bins = np.concatenate([s.bins for s in samples])
    actions = np.concatenate([s.actions for s in samples])
    wadv = np.concatenate([s.weight * s.advantages for s in samples])
    if policy.is_meta:
        rbf_rows = np.concatenate([
            np.broadcast_to(policy.feature_map.rbf_values(s.beta), (len(s.bins), len(policy.feature_map.rbf_centers)))
            for s in samples])
    else:
        rbf_rows = None
    return bins, actions, wadv, rbf_rows


def _probs_rows(policy, bins, rbf_rows):
    A = policy.n_actions
    tab = policy.theta[: policy.feature_map.tab_dim].reshape(N_STATE_BINS, A)
    logits = tab[bins].copy()
    if rbf_rows is not None:
        block = policy.theta[policy.feature_map.tab_dim:].reshape(-1, A)
        logits += rbf_rows @ block
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def batch_gradient(policy: SoftmaxPolicy, samples):
    """Average over episodes of w * sum_t adv_t * grad ln pi(a_t | s_t)."""
    if not samples:
        return np.zeros(policy.feature_map.dim)
    A = policy.n_actions
    bins, actions, wadv, rbf_rows = _flatten_samples(policy, samples)
    probs = _probs_rows(policy, bins, rbf_rows)
    resid = -wadv[:, None] * probs
    resid[np.arange(len(bins)), actions] += wadv
    tab_grad = np.zeros((N_STATE_BINS, A))
    np.add.at(tab_grad, bins, resid)
    grad = tab_grad.reshape(-1)
    if policy.is_meta:
        rbf_grad = rbf_rows.T @ resid
        grad = np.concatenate([grad, rbf_grad.reshape(-1)])
    return grad / len(samples)


def batch_surrogate(policy: SoftmaxPolicy, samples):
    """(1/B) sum_ep w sum_t adv_t * ln pi(a_t | s_t); gradient of this equals
    batch_gradient at every theta for the same frozen samples."""
    if not samples:
        return 0.0
    bins, actions, wadv, rbf_rows = _flatten_samples(policy, samples)
    probs = _probs_rows(policy, bins, rbf_rows)
    logp = np.log(probs[np.arange(len(bins)), actions])
    return float((wadv * logp).sum() / len(samples))


def _run_batch(scenario, ego, social, betas_per_episode, seeds, gamma, jobs):
    def one(i):
        return rollout(scenario, ego, social, betas_per_episode[i], int(seeds[i]), gamma)

    if jobs <= 1:
        return [one(i) for i in range(len(seeds))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(seeds))))


def _social_samples(records, baseline, gamma, beta_for_features=None):
    samples = []
    returns = []
    for rec in records:
        n_social = rec.bins.shape[1] - 1
        for i in range(n_social):
            mask = rec.bins[:, 1 + i] >= 0
            if not mask.any():
                continue
            bins = rec.bins[mask, 1 + i]
            acts = rec.actions[mask, 1 + i]
            G = rec.social_return(i, gamma)
            samples.append(EpisodeSample(
                bins=bins, actions=acts, advantages=G - baseline[bins],
                weight=1.0, beta=beta_for_features))
            returns.append(G)
    return samples, returns


def _update_baseline(baseline, samples, returns, eta):
    # batched moving-average: all episodes in an update see the same snapshot
    for smp, G in zip(samples, returns):
        ubins = np.unique(smp.bins)
        baseline[ubins] += eta * (G - baseline[ubins])


def train_social(beta_bar, cfg: TrainConfig, scenario):
    """REINFORCE a tabular social policy at one pinned preference value.

    The ego drives with an untrained (uniform-action) policy throughout. The
    returned history carries one row per update for progress CSVs.
    """
    beta_tag = format(float(beta_bar), "g")
    policy = tabular_policy(scenario.n_actions)
    ego = tabular_policy(scenario.n_actions)
    baseline = np.zeros(N_STATE_BINS)
    betas = [float(beta_bar)] * scenario.n_social
    history = []
    for u in range(cfg.updates):
        seeds = spawn_seeds(cfg.seed, cfg.batch, "social", beta_tag, "episodes", str(u))
        records = _run_batch(scenario, ego, policy, [betas] * cfg.batch, seeds,
                             cfg.gamma, cfg.jobs)
        samples, returns = _social_samples(records, baseline, cfg.gamma)
        grad = batch_gradient(policy, samples)
        policy = SoftmaxPolicy(policy.feature_map, policy.theta + cfg.lr * grad)
        _update_baseline(baseline, samples, returns, cfg.baseline_eta)
        history.append({
            "update": u,
            "mean_return": float(np.mean(returns)) if returns else 0.0,
            "mean_weight": 1.0,
            "kl": "",
        })
    return policy, history


def _kl_gradient(meta: SoftmaxPolicy, base: SoftmaxPolicy, bins, beta):
    """Gradient wrt meta theta of mean-over-bins KL(base || meta(.|beta))."""
    A = meta.n_actions
    rbf = meta.feature_map.rbf_values(beta)
    rbf_rows = np.broadcast_to(rbf, (len(bins), len(rbf)))
    q = _probs_rows(meta, bins, rbf_rows)
    p = _probs_rows(base, bins, None)
    diff = q - p
    tab_grad = np.zeros((N_STATE_BINS, A))
    np.add.at(tab_grad, bins, diff)
    rbf_grad = rbf_rows.T @ diff
    return np.concatenate([tab_grad.reshape(-1), rbf_grad.reshape(-1)]) / len(bins)


def _measure_kl(meta, neighbors, bins, beta):
    if not neighbors or len(bins) == 0:
        return ""
    A = meta.n_actions
    rbf_rows = np.broadcast_to(meta.feature_map.rbf_values(beta), (len(bins), len(meta.feature_map.rbf_centers)))
    q = _probs_rows(meta, bins, rbf_rows)
    total = 0.0
    for _, base in neighbors:
        p = _probs_rows(base, bins, None)
        total += float((p * np.log(p / q)).sum(axis=1).mean())
    return total / len(neighbors)


def train_meta(baselines: BaselineSet, beta_range, cfg: TrainConfig, scenario):
    """Train the beta-conditioned social policy.

    Each update samples one beta from the given range, takes a REINFORCE step
    at that beta, and descends lambda_reg times the KL(baseline || meta)
    gradient toward every baseline within the neighborhood radius, over a
    state batch replayed from recent episodes.
    """
    lo, hi = float(beta_range[0]), float(beta_range[1])
    if hi < lo:
        raise ConfigError(f"beta range must satisfy lo <= hi, got ({lo}, {hi})")
    policy = meta_policy(scenario.n_actions, baselines.betas, baselines.radius)
    baseline_values = np.zeros(N_STATE_BINS)
    replay = deque(maxlen=REPLAY_CAPACITY)
    history = []
    for u in range(cfg.updates):
        beta_rng = substream(cfg.seed, "meta", "beta", str(u))
        beta = lo if hi == lo else float(beta_rng.uniform(lo, hi))
        seeds = spawn_seeds(cfg.seed, cfg.batch, "meta", "episodes", str(u))
        betas = [beta] * scenario.n_social
        records = _run_batch(scenario, tabular_policy(scenario.n_actions), policy,
                             [betas] * cfg.batch, seeds, cfg.gamma, cfg.jobs)
        samples, returns = _social_samples(records, baseline_values, cfg.gamma,
                                           beta_for_features=beta)
        grad = batch_gradient(policy, samples)
        for smp in samples:
            replay.extend(smp.bins.tolist())

        neighbors = nearest_baselines(beta, baselines)
        kl_bins = np.empty(0, dtype=np.int64)
        if neighbors and cfg.lambda_reg > 0 and len(replay) > 0:
            reg_rng = substream(cfg.seed, "meta", "reg", str(u))
            idx = reg_rng.integers(0, len(replay), size=cfg.reg_batch)
            pool = np.fromiter(replay, dtype=np.int64, count=len(replay))
            kl_bins = pool[idx]
            for _, base in neighbors:
                grad = grad - cfg.lambda_reg * _kl_gradient(policy, base, kl_bins, beta)
        policy = SoftmaxPolicy(policy.feature_map, policy.theta + cfg.lr * grad)
        _update_baseline(baseline_values, samples, returns, cfg.baseline_eta)
        history.append({
            "update": u,
            "mean_return": float(np.mean(returns)) if returns else 0.0,
            "mean_weight": 1.0,
            "kl": _measure_kl(policy, neighbors, kl_bins, beta),
        })
    return policy, history


def train_ego(meta: SoftmaxPolicy, p_training, p_naturalistic, use_is,
              cfg: TrainConfig, scenario, init=None, per_vehicle_beta=False):
    """Train the ego policy under a scenario distribution over beta.

    With ``use_is`` the per-episode gradient is weighted by the capped
    likelihood ratio p_naturalistic / p_training at the episode's beta, so the
    expected update follows the naturalistic objective while sampling from
    the proposal. One beta is shared by all social vehicles per episode
    unless ``per_vehicle_beta`` is set, in which case the weight is the capped
    product of per-vehicle ratios.

    Advantages are episode returns standardized within the batch. The
    standardization constants come from the unweighted returns, so a neutral
    proposal (all weights exactly 1) reproduces the unweighted run bit for
    bit.
    """
    policy = init.copy() if init is not None else tabular_policy(scenario.n_actions)
    history = []
    for u in range(cfg.updates):
        beta_rng = substream(cfg.seed, "ego", "beta", str(u))
        betas_per_episode = []
        weights = []
        for _ in range(cfg.batch):
            if per_vehicle_beta:
                bb = [sample(p_training, beta_rng) for _ in range(scenario.n_social)]
                w = 1.0
                if use_is:
                    for b in bb:
                        w *= likelihood_ratio(p_naturalistic, p_training, b)
                    w = min(w, cfg.cap)
            else:
                b = sample(p_training, beta_rng)
                bb = [b] * scenario.n_social
                w = likelihood_ratio(p_naturalistic, p_training, b, cap=cfg.cap) if use_is else 1.0
            betas_per_episode.append(bb)
            weights.append(w)
        seeds = spawn_seeds(cfg.seed, cfg.batch, "ego", "episodes", str(u))
        records = _run_batch(scenario, policy, meta, betas_per_episode, seeds,
                             cfg.gamma, cfg.jobs)
        returns = np.array([rec.discounted_return for rec in records])
        adv = returns - returns.mean()
        spread = float(adv.std())
        if spread > 1e-12:
            adv = adv / spread
        samples = []
        for rec, w, a in zip(records, weights, adv):
            bins = rec.bins[:, 0]
            acts = rec.actions[:, 0]
            samples.append(EpisodeSample(
                bins=bins, actions=acts,
                advantages=np.full(bins.shape[0], a), weight=w))
        grad = batch_gradient(policy, samples)
        policy = SoftmaxPolicy(policy.feature_map, policy.theta + cfg.lr * grad)
        history.append({
            "update": u,
            "mean_return": float(np.mean(returns)),
            "mean_weight": float(np.mean(weights)),
            "kl": "",
        })
    return policy, history
