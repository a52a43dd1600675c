"""Linear-softmax policies over discretized scenario features.

Two feature layouts share one policy class:

* tabular: one-hot over (state bin x action), dimension N_STATE_BINS * A.
  Used by the ego policy and per-preference social baseline policies.
* meta: the tabular block followed by a radial-basis encoding of the social
  preference beta (one Gaussian bump per baseline preference, width d) crossed
  with the action one-hot, adding n_centers * A dimensions. The beta block
  makes one policy serve a continuum of preferences.

Probabilities are computed with explicit sequential loops (via the kernel
helpers) so compiled rollouts and this module agree bit-for-bit.
"""

import json
import math
import os

import numpy as np

from ._kernels import N_STATE_BINS, sample_action
from .errors import ConfigError, InvariantError, MissingArtifactError

DEFAULT_BASELINE_BETAS = (-1.0, 0.0, 1.0, 2.0, 3.0)
DEFAULT_NEIGHBOR_RADIUS = 0.5

POLICY_FORMAT_VERSION = 1


class FeatureMap:
    """Sparse feature layout descriptor for one policy family."""

    def __init__(self, kind, n_actions=4, rbf_centers=(), rbf_width=DEFAULT_NEIGHBOR_RADIUS):
        if kind not in ("tabular", "meta"):
            raise ConfigError(f"unknown feature map kind {kind!r}")
        if kind == "meta" and len(rbf_centers) == 0:
            raise ConfigError("meta feature map requires rbf centers")
        self.kind = kind
        self.n_actions = int(n_actions)
        self.rbf_centers = tuple(float(c) for c in rbf_centers) if kind == "meta" else ()
        self.rbf_width = float(rbf_width)
        self.tab_dim = N_STATE_BINS * self.n_actions
        self.dim = self.tab_dim + len(self.rbf_centers) * self.n_actions

    def rbf_values(self, beta):
        """Gaussian bump activations of beta at each center, in (0, 1]."""
        c = np.asarray(self.rbf_centers)
        z = (beta - c) / self.rbf_width
        return np.exp(-0.5 * z * z)

    def features(self, state_bin, action, beta=None):
        """Dense feature vector; all entries lie in [-1, 1]."""
        if not 0 <= action < self.n_actions:
            raise ConfigError(f"action index {action} out of range")
        phi = np.zeros(self.dim)
        phi[state_bin * self.n_actions + action] = 1.0
        if self.kind == "meta":
            if beta is None:
                raise ConfigError("meta features require beta")
            r = self.rbf_values(beta)
            for j in range(len(self.rbf_centers)):
                phi[self.tab_dim + j * self.n_actions + action] = r[j]
        return phi

    def to_dict(self):
        return {
            "kind": self.kind, "n_actions": self.n_actions,
            "rbf_centers": list(self.rbf_centers), "rbf_width": self.rbf_width,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["n_actions"], tuple(d.get("rbf_centers", ())),
                   d.get("rbf_width", DEFAULT_NEIGHBOR_RADIUS))


class SoftmaxPolicy:
    """Linear-softmax policy; immutable by convention during rollouts."""

    def __init__(self, feature_map: FeatureMap, theta=None):
        self.feature_map = feature_map
        if theta is None:
            theta = np.zeros(feature_map.dim)
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (feature_map.dim,):
            raise ConfigError(
                f"theta has shape {theta.shape}, feature map needs ({feature_map.dim},)")
        if not np.all(np.isfinite(theta)):
            raise ConfigError("theta contains non-finite entries")
        self.theta = theta

    @property
    def n_actions(self):
        return self.feature_map.n_actions

    @property
    def is_meta(self):
        return self.feature_map.kind == "meta"

    def copy(self):
        return SoftmaxPolicy(self.feature_map, self.theta.copy())

    def rbf_logits(self, beta):
        """Per-action logit contribution of the beta block; None for tabular."""
        if not self.is_meta:
            return None
        A = self.n_actions
        r = self.feature_map.rbf_values(beta)
        block = self.theta[self.feature_map.tab_dim:].reshape(len(r), A)
        return r @ block

    def probs(self, state_bin, beta=None):
        """Action distribution at one state bin (and beta for meta policies)."""
        A = self.n_actions
        if self.is_meta:
            if beta is None:
                raise ConfigError("meta policy requires beta")
            extra = self.rbf_logits(beta)
        else:
            extra = np.zeros(A)
        base = state_bin * A
        logits = [self.theta[base + a] + extra[a] for a in range(A)]
        m = logits[0]
        for l in logits[1:]:
            if l > m:
                m = l
        ssum = 0.0
        for l in logits:
            ssum += math.exp(l - m)
        return np.array([math.exp(l - m) / ssum for l in logits])

    def sample(self, state_bin, u, beta=None):
        """Draw an action with uniform u; matches the rollout kernel exactly."""
        if self.is_meta:
            extra = np.ascontiguousarray(self.rbf_logits(beta))
        else:
            extra = np.zeros(self.n_actions)
        return int(sample_action(self.theta, extra, state_bin, self.n_actions, u))

    def log_prob(self, state_bin, action, beta=None):
        return float(np.log(self.probs(state_bin, beta)[action]))

    def save(self, path):
        payload = {
            "format_version": POLICY_FORMAT_VERSION,
            "feature_map": self.feature_map.to_dict(),
            "theta": self.theta.tolist(),
        }
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise MissingArtifactError(f"policy file not found: {path}")
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format_version") != POLICY_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported policy format {payload.get('format_version')!r} in {path}")
        fmap = FeatureMap.from_dict(payload["feature_map"])
        return cls(fmap, np.asarray(payload["theta"], dtype=float))


def tabular_policy(n_actions=4, theta=None):
    return SoftmaxPolicy(FeatureMap("tabular", n_actions), theta)


def meta_policy(n_actions=4, centers=DEFAULT_BASELINE_BETAS,
                width=DEFAULT_NEIGHBOR_RADIUS, theta=None):
    return SoftmaxPolicy(FeatureMap("meta", n_actions, centers, width), theta)


class BaselineSet:
    """Trained per-preference social policies on a strictly increasing grid."""

    def __init__(self, betas, policies, radius=DEFAULT_NEIGHBOR_RADIUS):
        betas = tuple(float(b) for b in betas)
        if len(betas) != len(policies):
            raise ConfigError("one policy per baseline preference required")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ConfigError("baseline preferences must be strictly increasing")
        if radius <= 0:
            raise ConfigError(f"neighborhood radius must be > 0, got {radius}")
        self.betas = betas
        self.policies = tuple(policies)
        self.radius = float(radius)

    def __len__(self):
        return len(self.betas)

    def save(self, dirpath):
        os.makedirs(dirpath, exist_ok=True)
        meta = {"betas": list(self.betas), "radius": self.radius,
                "files": [f"social_{i}.policy.json" for i in range(len(self))]}
        for i, pol in enumerate(self.policies):
            pol.save(os.path.join(dirpath, meta["files"][i]))
        tmp = os.path.join(dirpath, "baselines.json.tmp")
        with open(tmp, "w") as fh:
            json.dump(meta, fh, indent=2)
        os.replace(tmp, os.path.join(dirpath, "baselines.json"))

    @classmethod
    def load(cls, dirpath):
        index = os.path.join(dirpath, "baselines.json")
        if not os.path.exists(index):
            raise MissingArtifactError(f"baseline index not found: {index}")
        with open(index) as fh:
            meta = json.load(fh)
        policies = [SoftmaxPolicy.load(os.path.join(dirpath, f)) for f in meta["files"]]
        return cls(meta["betas"], policies, meta["radius"])


def action_probs(policy: SoftmaxPolicy, features_per_action):
    """Softmax over logits theta . phi(s, a), one feature vector per action."""
    feats = np.asarray(features_per_action, dtype=float)
    if feats.ndim != 2 or feats.shape[0] != policy.n_actions:
        raise ConfigError("need one feature vector per action")
    logits = feats @ policy.theta
    m = float(logits[0])
    for l in logits[1:]:
        if l > m:
            m = float(l)
    exps = [math.exp(float(l) - m) for l in logits]
    ssum = 0.0
    for e in exps:
        ssum += e
    return np.array([e / ssum for e in exps])


def kl_divergence(p: SoftmaxPolicy, q: SoftmaxPolicy, state_bins,
                  p_beta=None, q_beta=None):
    """Mean KL(p || q) over a batch of state bins.

    For meta policies, the respective beta pins the action distribution.
    """
    if p.n_actions != q.n_actions:
        raise ConfigError("policies act on different action spaces")
    if len(state_bins) == 0:
        raise ConfigError("empty state batch")
    total = 0.0
    for sbin in state_bins:
        pp = p.probs(int(sbin), p_beta)
        qq = q.probs(int(sbin), q_beta)
        total += float(np.sum(pp * np.log(pp / qq)))
    return total / len(state_bins)


def nearest_baselines(beta, baselines: BaselineSet):
    """Baselines whose preference lies within the neighborhood radius of beta."""
    return [(b, pol) for b, pol in zip(baselines.betas, baselines.policies)
            if abs(b - beta) <= baselines.radius]


def score_gradient(policy: SoftmaxPolicy, state_bin, action, beta=None):
    """Gradient of ln pi(action | state) wrt theta: phi(s,a) - E_pi[phi(s,.)]."""
    if not 0 <= action < policy.n_actions:
        raise ConfigError(f"action index {action} out of range")
    probs = policy.probs(state_bin, beta)
    grad = np.zeros(policy.feature_map.dim)
    for b in range(policy.n_actions):
        grad -= probs[b] * policy.feature_map.features(state_bin, b, beta)
    grad += policy.feature_map.features(state_bin, action, beta)
    return grad
