"""Recovering the naturalistic preference distribution from trajectories.

A recorded vehicle trajectory is reduced to (state bin, action) pairs; the
preference estimate for a trajectory is the grid value maximizing the summed
log-likelihood of its actions under the trained beta-conditioned policy, a
plug-in stand-in for full inverse reinforcement learning. Estimates across
vehicles are then smoothed into a kernel density estimate, alongside a
moment-matched Gaussian for use as a pipeline starting distribution.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .distributions import Gaussian, fit_kde
from .errors import ConfigError, MissingArtifactError
from .simulator import GAP_HI, GAP_LO, ScenarioConfig

DEFAULT_BETA_GRID = np.round(np.arange(-1.5, 3.5 + 1e-9, 0.1), 10)

# spread below which a likelihood curve is considered uninformative, in nats
LOW_CONFIDENCE_SPREAD = 0.5


@dataclass
class Trajectory:
    """(state bin, action) sequence for one vehicle."""

    vehicle_id: str
    bins: np.ndarray
    actions: np.ndarray
    source: str = ""

    def __post_init__(self):
        if len(self.bins) == 0:
            raise ConfigError(f"trajectory {self.vehicle_id!r} is empty")
        if len(self.bins) != len(self.actions):
            raise ConfigError(
                f"trajectory {self.vehicle_id!r}: bins and actions differ in length")


@dataclass
class BetaEstimate:
    beta_hat: float
    curve: np.ndarray
    grid: np.ndarray
    low_confidence: bool


def ingest_trajectories(path, scenario: ScenarioConfig):
    """Load vehicle trajectories from a CSV file.

    Expected columns: vehicle_id, step, s, v, action_index. Optional columns
    other_gap and other_speed refine the observation features; without them
    the observed-other slot falls back to the no-oncoming-vehicle sentinel.
    Rows are grouped by vehicle id and ordered by step. Malformed rows and
    out-of-range action indices fail with their line number.
    """
    if not os.path.exists(path):
        raise MissingArtifactError(f"trajectory file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: empty trajectory file")
    header = [c.strip().lower() for c in rows[0]]
    required = ["vehicle_id", "step", "s", "v", "action_index"]
    for col in required:
        if col not in header:
            raise ConfigError(f"{path}: missing column {col!r}")
    idx = {c: header.index(c) for c in header}
    has_other = "other_gap" in idx and "other_speed" in idx

    per_vehicle = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vid = row[idx["vehicle_id"]].strip()
            step = int(row[idx["step"]])
            s = float(row[idx["s"]])
            v = float(row[idx["v"]])
            action = int(row[idx["action_index"]])
            if has_other:
                other_gap = float(row[idx["other_gap"]])
                other_speed = float(row[idx["other_speed"]])
                present = True
            else:
                other_gap, other_speed, present = 0.0, 0.0, False
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{path}:{lineno}: malformed row: {exc}") from exc
        if not 0 <= action < scenario.n_actions:
            raise ConfigError(
                f"{path}:{lineno}: action index {action} outside 0..{scenario.n_actions - 1}")
        sbin = int(_kernels.state_bin(
            s, v, scenario.social_goal, other_gap, other_speed, present,
            scenario.v_max, GAP_LO, GAP_HI))
        per_vehicle.setdefault(vid, []).append((step, sbin, action))

    trajectories = []
    for vid in sorted(per_vehicle):
        entries = sorted(per_vehicle[vid], key=lambda e: e[0])
        trajectories.append(Trajectory(
            vehicle_id=vid,
            bins=np.array([e[1] for e in entries], dtype=np.int64),
            actions=np.array([e[2] for e in entries], dtype=np.int64),
            source=path))
    return trajectories


def trajectory_from_episode(record, vehicle_index, vehicle_id=None):
    """Extract one social vehicle's trajectory from an episode record."""
    col = 1 + vehicle_index
    mask = record.bins[:, col] >= 0
    return Trajectory(
        vehicle_id=vehicle_id or f"ep{record.seed}-v{vehicle_index}",
        bins=record.bins[mask, col],
        actions=record.actions[mask, col],
        source="rollout")


def estimate_beta(traj: Trajectory, meta, grid=DEFAULT_BETA_GRID) -> BetaEstimate:
    """Grid argmax of the action log-likelihood under the meta policy.

    Ties (including a fully flat curve) break toward the grid median. A curve
    whose max-min spread is below LOW_CONFIDENCE_SPREAD nats sets the
    low-confidence flag.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("beta grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("beta grid must be strictly increasing")
    A = meta.n_actions
    tab = meta.theta[: meta.feature_map.tab_dim].reshape(-1, A)
    block = meta.theta[meta.feature_map.tab_dim:].reshape(-1, A)
    logits_tab = tab[traj.bins]
    curve = np.empty(grid.size)
    for gi, beta in enumerate(grid):
        logits = logits_tab + meta.feature_map.rbf_values(beta) @ block
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        curve[gi] = float(logp[np.arange(len(traj.bins)), traj.actions].sum())
    best = curve.max()
    tied = np.flatnonzero(curve >= best - 1e-12)
    median_idx = (grid.size - 1) / 2.0
    pick = tied[np.argmin(np.abs(tied - median_idx))]
    spread = float(curve.max() - curve.min())
    return BetaEstimate(
        beta_hat=float(grid[pick]), curve=curve, grid=grid,
        low_confidence=spread < LOW_CONFIDENCE_SPREAD)


@dataclass
class NaturalisticFit:
    kde: object
    gaussian: Gaussian


def fit_naturalistic(betas, bandwidth="auto") -> NaturalisticFit:
    """KDE over estimates plus the moment-matched best-fit Gaussian."""
    betas = np.asarray(betas, dtype=float)
    if betas.size < 2:
        raise ConfigError(f"need at least 2 estimates, got {betas.size}")
    kde = fit_kde(betas, bandwidth)
    mu = float(betas.mean())
    sd = float(betas.std())
    if sd == 0.0:
        raise ConfigError("degenerate sample set: zero variance")
    return NaturalisticFit(kde=kde, gaussian=Gaussian(mu, sd))


def write_beta_estimates(path, rows):
    """rows: (vehicle_id, BetaEstimate) pairs -> betas.csv."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "beta_hat", "confidence"])
        for vid, est in rows:
            writer.writerow([
                vid, f"{est.beta_hat:.6f}",
                "low" if est.low_confidence else "ok"])
