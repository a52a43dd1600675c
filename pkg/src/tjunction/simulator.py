"""Deterministic seeded T-intersection episodes.

Geometry: social vehicles travel a straight west-east major road; the ego
approaches on a minor road from the south, turns, and merges into the major
road. The two polylines overlap within one contiguous conflict region per
path, computed numerically at config construction.

Dynamics: per vehicle, v' = clamp(v + a*dt, 0, v_max), s' = s + v'*dt along
the vehicle's polyline arc length. Collision is a single radius check between
the ego and each active social vehicle. Social vehicles despawn on completing
their path. Collision takes precedence over success within a step.

Rewards: the ego earns a per-step penalty, a dense progress term summing to
``progress_reward`` over the full path, +``success_reward`` on success and
``collision_penalty`` on collision. A social vehicle earns its path-progress
fraction (summing to 1.0) plus beta times a speed penalty -v'/v_max per step,
so lower beta means more aggressive driving.

The fast rollout path runs in tjunction._kernels; ``reset``/``step`` here are
a pure-Python reference of the same arithmetic used by parity tests.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, InvariantError

OUTCOMES = ("timeout", "success", "collision")

DEFAULT_EGO_PATH = ((20.0, -22.0), (20.0, -4.0), (26.0, 0.0), (56.0, 0.0))
DEFAULT_SOCIAL_PATH = ((-40.0, 0.0), (56.0, 0.0))

# signed gap-to-conflict feature range in meters, shared with policies
GAP_LO = -20.0
GAP_HI = 40.0


def _polyline_arrays(path):
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ConfigError("a path needs at least two 2D points")
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths <= 0):
        raise ConfigError("path has a zero-length segment")
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    return np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), cum


def _min_dist_to_polyline(points, px, py):
    """Per-point minimum distance to a polyline given by vertex arrays."""
    best = np.full(points.shape[0], np.inf)
    for k in range(px.shape[0] - 1):
        a = np.array([px[k], py[k]])
        d = np.array([px[k + 1] - px[k], py[k + 1] - py[k]])
        L2 = float(d @ d)
        t = np.clip(((points - a) @ d) / L2, 0.0, 1.0)
        proj = a + t[:, None] * d
        best = np.minimum(best, np.hypot(*(points - proj).T))
    return best


def _conflict_interval(own_px, own_py, own_cum, other_px, other_py, radius, label):
    """Arc-length interval of 'own' points within radius of the other path.

    Requires exactly one contiguous region; sampled at 0.05 m resolution.
    """
    L = float(own_cum[-1])
    n = max(2, int(L / 0.05) + 1)
    ss = np.linspace(0.0, L, n)
    xs = np.interp(ss, own_cum, own_px)
    ys = np.interp(ss, own_cum, own_py)
    near = _min_dist_to_polyline(np.column_stack([xs, ys]), other_px, other_py) <= radius
    if not near.any():
        raise ConfigError(f"{label}: paths never come within the collision radius")
    idx = np.flatnonzero(near)
    if np.any(np.diff(idx) != 1):
        raise ConfigError(f"{label}: paths intersect in more than one conflict region")
    return float(ss[idx[0]]), float(ss[idx[-1]])


@dataclass
class ScenarioConfig:
    """Static scenario description plus derived geometry.

    Treat instances as immutable after construction; derived fields are
    computed once in __post_init__.
    """

    dt: float = 0.2
    max_steps: int = 100
    ego_path: tuple = DEFAULT_EGO_PATH
    social_path: tuple = DEFAULT_SOCIAL_PATH
    v_max: float = 10.0
    accel_set: tuple = (-4.0, -2.0, 0.0, 2.0)
    collision_radius: float = 2.0
    n_social: int = 2
    spawn_s: tuple = (0.0, 45.0)
    spawn_v: tuple = (4.0, 8.0)
    seed: int = 0
    step_penalty: float = -0.01
    success_reward: float = 1.0
    collision_penalty: float = -2.0
    progress_reward: float = 0.5

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if len(self.accel_set) == 0:
            raise ConfigError("accel_set must be non-empty")
        if self.v_max <= 0:
            raise ConfigError(f"v_max must be > 0, got {self.v_max}")
        if self.collision_radius <= 0:
            raise ConfigError(f"collision_radius must be > 0, got {self.collision_radius}")
        if self.n_social < 0:
            raise ConfigError(f"n_social must be >= 0, got {self.n_social}")
        if not self.spawn_s[0] <= self.spawn_s[1] or not self.spawn_v[0] <= self.spawn_v[1]:
            raise ConfigError("spawn ranges must satisfy lo <= hi")
        self.ego_path = tuple((float(x), float(y)) for x, y in self.ego_path)
        self.social_path = tuple((float(x), float(y)) for x, y in self.social_path)
        self.accel_set = tuple(float(a) for a in self.accel_set)
        self._ego_px, self._ego_py, self._ego_cum = _polyline_arrays(self.ego_path)
        self._soc_px, self._soc_py, self._soc_cum = _polyline_arrays(self.social_path)
        self.ego_goal = float(self._ego_cum[-1])
        self.social_goal = float(self._soc_cum[-1])
        self.ego_conflict = _conflict_interval(
            self._ego_px, self._ego_py, self._ego_cum,
            self._soc_px, self._soc_py, self.collision_radius, "ego path")
        self.social_conflict = _conflict_interval(
            self._soc_px, self._soc_py, self._soc_cum,
            self._ego_px, self._ego_py, self.collision_radius, "social path")
        self._accels = np.asarray(self.accel_set, dtype=float)

    @property
    def n_actions(self):
        return len(self.accel_set)

    def to_dict(self):
        return {
            "dt": self.dt,
            "max_steps": self.max_steps,
            "ego_path": [list(p) for p in self.ego_path],
            "social_path": [list(p) for p in self.social_path],
            "v_max": self.v_max,
            "accel_set": list(self.accel_set),
            "collision_radius": self.collision_radius,
            "n_social": self.n_social,
            "spawn_s": list(self.spawn_s),
            "spawn_v": list(self.spawn_v),
            "seed": self.seed,
            "step_penalty": self.step_penalty,
            "success_reward": self.success_reward,
            "collision_penalty": self.collision_penalty,
            "progress_reward": self.progress_reward,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("ego_path", "social_path"):
            if key in d:
                d[key] = tuple(tuple(p) for p in d[key])
        for key in ("accel_set", "spawn_s", "spawn_v"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def draw_episode_randomness(config: ScenarioConfig, seed):
    """Pre-draw spawn states and per-(step, vehicle) action uniforms."""
    rng = np.random.default_rng(seed)
    spawn_s = np.empty(config.n_social)
    spawn_v = np.empty(config.n_social)
    for i in range(config.n_social):
        spawn_s[i] = rng.uniform(config.spawn_s[0], config.spawn_s[1])
        spawn_v[i] = rng.uniform(config.spawn_v[0], config.spawn_v[1])
    uniforms = rng.random((config.max_steps, 1 + config.n_social))
    return spawn_s, spawn_v, uniforms


@dataclass
class WorldState:
    """Mutable-in-principle episode state; step() returns modified copies."""

    step: int
    ego_s: float
    ego_v: float
    social_s: np.ndarray
    social_v: np.ndarray
    finished: np.ndarray
    betas: tuple
    outcome: str = None  # None while running
    uniforms: np.ndarray = field(default=None, repr=False)

    @property
    def terminal(self):
        return self.outcome is not None


def reset(config: ScenarioConfig, betas, seed) -> WorldState:
    """Place the ego at path start with v=0 and social vehicles per spawn ranges."""
    if len(betas) != config.n_social:
        raise ConfigError(
            f"expected {config.n_social} beta values, got {len(betas)}")
    spawn_s, spawn_v, uniforms = draw_episode_randomness(config, seed)
    return WorldState(
        step=0, ego_s=0.0, ego_v=0.0,
        social_s=spawn_s, social_v=spawn_v,
        finished=np.zeros(config.n_social, dtype=bool),
        betas=tuple(float(b) for b in betas),
        uniforms=uniforms)


def step(config: ScenarioConfig, state: WorldState, ego_accel_idx, social_accel_idxs):
    """Advance one step with explicit action indices.

    Returns (new_state, ego_reward, social_rewards, outcome_or_none). The
    arithmetic mirrors the compiled kernel operation-for-operation.
    """
    if state.terminal:
        raise InvariantError("cannot step a terminal state")
    if len(social_accel_idxs) != config.n_social:
        raise ConfigError(
            f"expected {config.n_social} social actions, got {len(social_accel_idxs)}")
    accels = config._accels
    dt = config.dt
    v_max = config.v_max

    ego_v2 = state.ego_v + accels[ego_accel_idx] * dt
    if ego_v2 < 0.0:
        ego_v2 = 0.0
    if ego_v2 > v_max:
        ego_v2 = v_max
    ego_s2 = state.ego_s + ego_v2 * dt

    r_ego = config.step_penalty + config.progress_reward * (
        (ego_s2 if ego_s2 < config.ego_goal else config.ego_goal) - state.ego_s
    ) / config.ego_goal

    s = state.social_s.copy()
    v = state.social_v.copy()
    finished = state.finished.copy()
    r_social = np.zeros(config.n_social)
    for i in range(config.n_social):
        if finished[i]:
            continue
        v2 = v[i] + accels[social_accel_idxs[i]] * dt
        if v2 < 0.0:
            v2 = 0.0
        if v2 > v_max:
            v2 = v_max
        s2 = s[i] + v2 * dt
        credit = (s2 if s2 < config.social_goal else config.social_goal) - s[i]
        r_social[i] = credit / config.social_goal + state.betas[i] * (-v2 / v_max)
        s[i] = s2
        v[i] = v2
        if s2 >= config.social_goal:
            finished[i] = True

    ex, ey = _kernels.position_on_path(
        config._ego_px, config._ego_py, config._ego_cum, ego_s2)
    collided = False
    for i in range(config.n_social):
        if finished[i]:
            continue
        sx, sy = _kernels.position_on_path(
            config._soc_px, config._soc_py, config._soc_cum, s[i])
        dx = ex - sx
        dy = ey - sy
        if dx * dx + dy * dy <= config.collision_radius * config.collision_radius:
            collided = True
            break

    outcome = None
    if collided:
        outcome = "collision"
        r_ego += config.collision_penalty
    elif ego_s2 >= config.ego_goal:
        outcome = "success"
        r_ego += config.success_reward
    elif state.step + 1 >= config.max_steps:
        outcome = "timeout"

    new_state = replace(
        state, step=state.step + 1, ego_s=ego_s2, ego_v=ego_v2,
        social_s=s, social_v=v, finished=finished, outcome=outcome)
    return new_state, r_ego, r_social, outcome


@dataclass
class EpisodeRecord:
    """Full trace of one episode.

    Array rows cover vehicle 0 (ego) then social vehicles 1..n. ``s``/``v``
    have steps+1 rows (row 0 is the initial state); ``bins``, ``actions`` and
    ``rewards`` have one row per executed step. A -1 bin/action marks a
    despawned social vehicle.
    """

    seed: int
    betas: tuple
    outcome: str
    steps: int
    discounted_return: float
    s: np.ndarray
    v: np.ndarray
    bins: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def success(self):
        return self.outcome == "success"

    @property
    def failure(self):
        return self.outcome != "success"

    def social_return(self, i, gamma):
        """Discounted return of social vehicle i."""
        r = self.rewards[:, 1 + i]
        return float(r @ np.power(gamma, np.arange(len(r))))

    def to_jsonl(self):
        header = {
            "type": "episode", "seed": int(self.seed),
            "betas": [float(b) for b in self.betas],
            "outcome": self.outcome, "steps": int(self.steps),
            "discounted_return": float(self.discounted_return),
        }
        lines = [json.dumps(header, separators=(",", ":"))]
        for t in range(self.steps):
            row = {
                "t": t,
                "s": [float(x) for x in self.s[t + 1]],
                "v": [float(x) for x in self.v[t + 1]],
                "bins": [int(b) for b in self.bins[t]],
                "actions": [int(a) for a in self.actions[t]],
                "rewards": [float(r) for r in self.rewards[t]],
            }
            lines.append(json.dumps(row, separators=(",", ":")))
        return "\n".join(lines) + "\n"


def _social_policy_arrays(config, social_policy, betas):
    theta = social_policy.theta
    rbf = np.zeros((config.n_social, config.n_actions))
    for i, b in enumerate(betas):
        row = social_policy.rbf_logits(b)
        if row is not None:
            rbf[i] = row
    return theta, rbf


def rollout(config: ScenarioConfig, ego_policy, social_policy, betas, seed,
            discount=0.99) -> EpisodeRecord:
    """Run one seeded episode through the compiled kernel."""
    if len(betas) != config.n_social:
        raise ConfigError(
            f"expected {config.n_social} beta values, got {len(betas)}")
    spawn_s, spawn_v, uniforms = draw_episode_randomness(config, seed)
    theta_soc, rbf = _social_policy_arrays(config, social_policy, betas)
    n = 1 + config.n_social
    out_s = np.zeros((config.max_steps + 1, n))
    out_v = np.zeros((config.max_steps + 1, n))
    out_bins = np.zeros((config.max_steps, n), dtype=np.int64)
    out_actions = np.zeros((config.max_steps, n), dtype=np.int64)
    out_rewards = np.zeros((config.max_steps, n))
    steps, outcome_code, ego_return = _kernels.run_episode(
        config.dt, config.max_steps, config.v_max, config.collision_radius,
        discount, config.step_penalty, config.success_reward,
        config.collision_penalty, config.progress_reward,
        config._accels,
        config._ego_px, config._ego_py, config._ego_cum,
        config._soc_px, config._soc_py, config._soc_cum,
        config.ego_conflict[0], config.social_conflict[0],
        GAP_LO, GAP_HI,
        ego_policy.theta, theta_soc, rbf,
        np.asarray(betas, dtype=float), spawn_s, spawn_v, uniforms,
        out_s, out_v, out_bins, out_actions, out_rewards)
    return EpisodeRecord(
        seed=seed, betas=tuple(float(b) for b in betas),
        outcome=OUTCOMES[outcome_code], steps=int(steps),
        discounted_return=float(ego_return),
        s=out_s[: steps + 1], v=out_v[: steps + 1],
        bins=out_bins[:steps], actions=out_actions[:steps],
        rewards=out_rewards[:steps])


def reference_rollout(config: ScenarioConfig, ego_policy, social_policy, betas,
                      seed, discount=0.99) -> EpisodeRecord:
    """Pure reset/step rollout; must agree bit-for-bit with rollout()."""
    state = reset(config, betas, seed)
    theta_soc, rbf = _social_policy_arrays(config, social_policy, betas)
    zero_logits = np.zeros(config.n_actions)
    n = 1 + config.n_social
    rows_s = [np.concatenate([[state.ego_s], state.social_s])]
    rows_v = [np.concatenate([[state.ego_v], state.social_v])]
    bins, actions, rewards = [], [], []
    ego_return = 0.0
    gamma_t = 1.0
    while not state.terminal:
        t = state.step
        brow = np.full(n, -1, dtype=np.int64)
        arow = np.full(n, -1, dtype=np.int64)
        # ego observes the unfinished social nearest its conflict entry
        best, obs_gap, obs_speed, present = math.inf, 0.0, 0.0, False
        for i in range(config.n_social):
            if state.finished[i]:
                continue
            g = config.social_conflict[0] - state.social_s[i]
            if abs(g) < best:
                best, obs_gap, obs_speed, present = abs(g), g, state.social_v[i], True
        brow[0] = _kernels.state_bin(
            state.ego_s, state.ego_v, config.ego_goal, obs_gap, obs_speed,
            present, config.v_max, GAP_LO, GAP_HI)
        arow[0] = _kernels.sample_action(
            ego_policy.theta, zero_logits, brow[0], config.n_actions,
            state.uniforms[t, 0])
        ego_gap = config.ego_conflict[0] - state.ego_s
        for i in range(config.n_social):
            if state.finished[i]:
                continue
            brow[1 + i] = _kernels.state_bin(
                state.social_s[i], state.social_v[i], config.social_goal,
                ego_gap, state.ego_v, True, config.v_max, GAP_LO, GAP_HI)
            arow[1 + i] = _kernels.sample_action(
                theta_soc, rbf[i], brow[1 + i], config.n_actions,
                state.uniforms[t, 1 + i])
        state, r_ego, r_soc, _ = step(config, state, arow[0], arow[1:])
        bins.append(brow)
        actions.append(arow)
        rewards.append(np.concatenate([[r_ego], r_soc]))
        rows_s.append(np.concatenate([[state.ego_s], state.social_s]))
        rows_v.append(np.concatenate([[state.ego_v], state.social_v]))
        ego_return += gamma_t * r_ego
        gamma_t *= discount
    return EpisodeRecord(
        seed=seed, betas=tuple(float(b) for b in betas),
        outcome=state.outcome, steps=state.step,
        discounted_return=float(ego_return),
        s=np.array(rows_s), v=np.array(rows_v),
        bins=np.array(bins), actions=np.array(actions),
        rewards=np.array(rewards))


def mean_social_speed(records):
    """Mean post-step speed over active social-vehicle steps across episodes."""
    total = 0.0
    count = 0
    for rec in records:
        active = rec.bins[:, 1:] >= 0
        total += float(rec.v[1:, 1:][active].sum())
        count += int(active.sum())
    return total / count if count else 0.0
