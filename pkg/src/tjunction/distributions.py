"""Scalar distributions over the aggressiveness preference beta.

Four families cover every training and evaluation distribution used by the
package: Uniform, Gaussian, Gaussian mixture, and Gaussian-kernel KDE. All
support pointwise density evaluation (scalar or vectorized), seeded sampling,
and a literal syntax used by config files, e.g. ``uniform(-1,3)``,
``gaussian(1.5,0.5)``, ``gmm([0.5,1.5],0.5,equal)``, ``kde(betas.csv,auto)``.

Instances are immutable after construction and safe to share across threads;
each sampler owns its own ``numpy.random.Generator``.
"""

import csv
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MissingArtifactError, SupportCoverageError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _normal_pdf(x, mu, sigma):
    z = (x - mu) / sigma
    return np.exp(-0.5 * z * z) * (_INV_SQRT_2PI / sigma)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"uniform requires lo < hi, got ({self.lo}, {self.hi})")

    def density(self, beta):
        beta = np.asarray(beta, dtype=float)
        inside = (beta >= self.lo) & (beta <= self.hi)
        out = np.where(inside, 1.0 / (self.hi - self.lo), 0.0)
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.lo, self.hi))

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=n)

    def support_pad(self, k: float = 10.0):
        return self.lo, self.hi

    def to_literal(self) -> str:
        return f"uniform({_fmt(self.lo)},{_fmt(self.hi)})"


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"gaussian requires sigma > 0, got {self.sigma}")

    def density(self, beta):
        beta = np.asarray(beta, dtype=float)
        out = _normal_pdf(beta, self.mu, self.sigma)
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.normal(self.mu, self.sigma))

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mu, self.sigma, size=n)

    def support_pad(self, k: float = 10.0):
        return self.mu - k * self.sigma, self.mu + k * self.sigma

    def to_literal(self) -> str:
        return f"gaussian({_fmt(self.mu)},{_fmt(self.sigma)})"


@dataclass(frozen=True)
class Mixture:
    means: tuple
    sigmas: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.means) == 0:
            raise ConfigError("mixture requires at least one component")
        if not (len(self.means) == len(self.sigmas) == len(self.weights)):
            raise ConfigError("mixture component lists must have equal length")
        if any(s <= 0 for s in self.sigmas):
            raise ConfigError("mixture sigmas must all be > 0")
        if any(w < 0 for w in self.weights):
            raise ConfigError("mixture weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights must sum to 1, got {sum(self.weights)}")

    def density(self, beta):
        beta = np.asarray(beta, dtype=float)
        out = np.zeros_like(beta, dtype=float)
        for m, s, w in zip(self.means, self.sigmas, self.weights):
            out = out + w * _normal_pdf(beta, m, s)
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator) -> float:
        u = rng.random()
        acc = 0.0
        idx = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            acc += w
            if u < acc:
                idx = i
                break
        return float(rng.normal(self.means[idx], self.sigmas[idx]))

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.array([self.sample(rng) for _ in range(n)])

    def support_pad(self, k: float = 10.0):
        smax = max(self.sigmas)
        return min(self.means) - k * smax, max(self.means) + k * smax

    def to_literal(self) -> str:
        means = "[" + ",".join(_fmt(m) for m in self.means) + "]"
        if len(set(self.sigmas)) == 1 and _equal_weights(self.weights):
            return f"gmm({means},{_fmt(self.sigmas[0])},equal)"
        weights = "[" + ",".join(_fmt(w) for w in self.weights) + "]"
        return f"gmm({means},{_fmt(self.sigmas[0])},{weights})"


@dataclass(frozen=True)
class Kde:
    samples: tuple
    bandwidth: float
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ConfigError("kde requires at least one sample")
        if not self.bandwidth > 0:
            raise ConfigError(f"kde bandwidth must be > 0, got {self.bandwidth}")

    def density(self, beta):
        beta = np.asarray(beta, dtype=float)
        pts = np.atleast_1d(beta)
        centers = np.asarray(self.samples)
        out = np.empty(pts.shape, dtype=float)
        # chunk to keep the (points x centers) broadcast bounded in memory
        step = max(1, 4_000_000 // max(1, centers.size))
        for i in range(0, pts.size, step):
            block = pts.reshape(-1)[i : i + step]
            vals = _normal_pdf(block[:, None], centers[None, :], self.bandwidth)
            out.reshape(-1)[i : i + step] = vals.mean(axis=1)
        return out if np.asarray(beta).ndim else float(out.reshape(-1)[0])

    def sample(self, rng: np.random.Generator) -> float:
        idx = int(rng.integers(0, len(self.samples)))
        return float(rng.normal(self.samples[idx], self.bandwidth))

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.array([self.sample(rng) for _ in range(n)])

    def support_pad(self, k: float = 10.0):
        return min(self.samples) - k * self.bandwidth, max(self.samples) + k * self.bandwidth

    def to_literal(self) -> str:
        if self.source:
            return f"kde({self.source},{_fmt(self.bandwidth)})"
        return f"kde(<{len(self.samples)} samples>,{_fmt(self.bandwidth)})"


ScenarioDistribution = (Uniform, Gaussian, Mixture, Kde)


def _equal_weights(weights) -> bool:
    k = len(weights)
    return all(abs(w - 1.0 / k) <= 1e-12 for w in weights)


def _fmt(x: float) -> str:
    return format(float(x), "g")


def density(dist, beta):
    """Probability density of ``dist`` at ``beta`` (scalar or array)."""
    return dist.density(beta)


def to_literal_or_repr(dist) -> str:
    """Literal form when available, repr otherwise (for reports and tables)."""
    to_lit = getattr(dist, "to_literal", None)
    return to_lit() if to_lit is not None else repr(dist)


def sample(dist, rng: np.random.Generator) -> float:
    """One draw from ``dist`` using the caller's generator."""
    return dist.sample(rng)


def likelihood_ratio(numerator, denominator, beta: float, cap: float = None) -> float:
    """Importance weight numerator(beta) / denominator(beta), optionally capped.

    The denominator must cover every beta the caller can reach by sampling
    from it; a zero denominator density raises SupportCoverageError. A zero
    numerator with positive denominator is legal and yields 0.
    """
    den = denominator.density(beta)
    if den <= 0.0:
        raise SupportCoverageError(
            f"proposal does not cover naturalistic support at beta={beta!r}"
        )
    ratio = numerator.density(beta) / den
    if cap is not None:
        ratio = min(ratio, cap)
    return float(ratio)


def silverman_bandwidth(samples: np.ndarray) -> float:
    """Rule-of-thumb bandwidth 1.06 * sd * n^(-1/5)."""
    samples = np.asarray(samples, dtype=float)
    sd = float(np.std(samples))
    if sd == 0.0:
        raise ConfigError("degenerate sample set: zero variance, cannot auto-select bandwidth")
    return 1.06 * sd * len(samples) ** (-1.0 / 5.0)


def fit_kde(samples, bandwidth="auto") -> Kde:
    """Gaussian-kernel KDE over the samples; 'auto' uses the Silverman rule."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise ConfigError(f"kde fit requires at least 2 samples, got {samples.size}")
    if bandwidth == "auto":
        bw = silverman_bandwidth(samples)
    else:
        bw = float(bandwidth)
        if bw <= 0:
            raise ConfigError(f"kde bandwidth must be > 0, got {bw}")
    return Kde(samples=tuple(samples.tolist()), bandwidth=bw)


def make_gmm(means, sigma: float, weights="equal") -> Mixture:
    """Mixture with one component per mean, all sharing ``sigma``.

    ``weights='equal'`` assigns 1/k to each of the k components.
    """
    means = tuple(float(m) for m in means)
    if len(means) == 0:
        raise ConfigError("gmm requires at least one component mean")
    if isinstance(weights, str):
        if weights != "equal":
            raise ConfigError(f"unknown gmm weight spec {weights!r}")
        w = tuple(1.0 / len(means) for _ in means)
    else:
        w = tuple(float(x) for x in weights)
        if len(w) != len(means):
            raise ConfigError("gmm weights must match the number of means")
    sigmas = tuple(float(sigma) for _ in means)
    return Mixture(means=means, sigmas=sigmas, weights=w)


_LITERAL_RE = re.compile(r"^\s*([a-zA-Z_]+)\s*\((.*)\)\s*$", re.S)


def parse_literal(text: str, base_dir: str = ".") -> "Uniform | Gaussian | Mixture | Kde":
    """Parse a distribution literal as used in config files and CLI flags."""
    m = _LITERAL_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse distribution literal {text!r}")
    head = m.group(1).lower()
    body = m.group(2).strip()
    try:
        if head == "uniform":
            lo, hi = _split_args(body, 2)
            return Uniform(float(lo), float(hi))
        if head == "gaussian":
            mu, sg = _split_args(body, 2)
            return Gaussian(float(mu), float(sg))
        if head == "gmm":
            means_s, sigma_s, weights_s = _split_args(body, 3)
            means = _parse_list(means_s)
            if weights_s.strip().lower() == "equal":
                return make_gmm(means, float(sigma_s), "equal")
            return make_gmm(means, float(sigma_s), _parse_list(weights_s))
        if head == "kde":
            path_s, bw_s = _split_args(body, 2)
            return load_kde(path_s.strip(), bw_s.strip(), base_dir=base_dir)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse distribution literal {text!r}: {exc}") from exc
    raise ConfigError(f"unknown distribution kind {head!r} in {text!r}")


def _split_args(body: str, n: int):
    parts = []
    depth = 0
    cur = []
    for ch in body:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    if len(parts) != n:
        raise ConfigError(f"expected {n} arguments, got {len(parts)} in {body!r}")
    return [p.strip() for p in parts]


def _parse_list(text: str):
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ConfigError(f"expected a [..] list, got {text!r}")
    inner = text[1:-1].strip()
    if not inner:
        return []
    return [float(x) for x in inner.split(",")]


def load_kde(path: str, bandwidth="auto", base_dir: str = ".") -> Kde:
    """Build a KDE from a CSV of beta values (column beta_hat or beta, or one bare column)."""
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(full):
        raise MissingArtifactError(f"kde sample file not found: {full}")
    betas = read_beta_csv(full)
    bw = bandwidth if bandwidth == "auto" else float(bandwidth)
    kde = fit_kde(betas, bw)
    return Kde(samples=kde.samples, bandwidth=kde.bandwidth, source=path)


def read_beta_csv(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"empty beta file: {path}")
    header = [c.strip().lower() for c in rows[0]]
    col = None
    start = 0
    for name in ("beta_hat", "beta"):
        if name in header:
            col = header.index(name)
            start = 1
            break
    if col is None:
        # single bare column of floats, possibly without a header
        col = 0
        try:
            float(rows[0][0])
        except (ValueError, IndexError):
            start = 1
    out = []
    for i, row in enumerate(rows[start:], start=start + 1):
        if not row or not row[col].strip():
            continue
        try:
            out.append(float(row[col]))
        except ValueError as exc:
            raise ConfigError(f"{path}:{i}: cannot parse beta value {row[col]!r}") from exc
    if not out:
        raise ConfigError(f"no beta values found in {path}")
    return np.asarray(out)
