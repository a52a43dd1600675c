"""Episode rollout kernel with an optional numba-compiled fast path.

The same function bodies serve both paths: when numba is importable and
TJUNCTION_DISABLE_NUMBA is not set to "1", the module-level names are rebound
to @njit-compiled versions at import time; otherwise the plain Python
definitions run as-is. Both paths execute identical floating-point operation
sequences, so results are bit-identical (see tests/test_kernels.py).

The kernel is RNG-free: spawn positions and per-step action uniforms are drawn
by the caller up front, so a rollout is a pure function of its inputs. Action
uniforms are indexed by (step, vehicle), never consumed sequentially, which
keeps every vehicle's randomness independent of the others' termination.

Feature binning (shared with the policies module):
  own progress 8 bins x own speed 4 bins x other gap-to-conflict 8 bins x
  other speed 4 bins = 1024 state bins. The "other" vehicle is the ego for
  social observers and the nearest unfinished social for the ego observer;
  an absent other maps to the farthest gap bin with speed bin 0.
"""

import math
import os

import numpy as np

N_PROG_BINS = 8
N_SPEED_BINS = 4
N_GAP_BINS = 8
N_OSPEED_BINS = 4
N_STATE_BINS = N_PROG_BINS * N_SPEED_BINS * N_GAP_BINS * N_OSPEED_BINS

# outcome codes shared with the simulator module
TIMEOUT = 0
SUCCESS = 1
COLLISION = 2

JIT_OPTIONS = {"cache": True, "nogil": True, "fastmath": False}


def position_on_path(px, py, cum, s):
    """Map arc length s to a 2D point on the polyline, clamped at the ends."""
    n = cum.shape[0]
    if s <= 0.0:
        return px[0], py[0]
    if s >= cum[n - 1]:
        return px[n - 1], py[n - 1]
    for k in range(1, n):
        if s <= cum[k]:
            f = (s - cum[k - 1]) / (cum[k] - cum[k - 1])
            return px[k - 1] + f * (px[k] - px[k - 1]), py[k - 1] + f * (py[k] - py[k - 1])
    return px[n - 1], py[n - 1]


def state_bin(own_s, own_v, own_goal, other_gap, other_speed, other_present,
              v_max, gap_lo, gap_hi):
    """Discretize an observation into one of N_STATE_BINS indices."""
    pb = int(own_s / own_goal * 8.0)
    if pb < 0:
        pb = 0
    if pb > 7:
        pb = 7
    vb = int(own_v / v_max * 4.0)
    if vb < 0:
        vb = 0
    if vb > 3:
        vb = 3
    if other_present:
        g = other_gap
        if g < gap_lo:
            g = gap_lo
        if g > gap_hi:
            g = gap_hi
        gb = int((g - gap_lo) / (gap_hi - gap_lo) * 8.0)
        if gb < 0:
            gb = 0
        if gb > 7:
            gb = 7
        ob = int(other_speed / v_max * 4.0)
        if ob < 0:
            ob = 0
        if ob > 3:
            ob = 3
    else:
        gb = 7
        ob = 0
    return ((pb * 4 + vb) * 8 + gb) * 4 + ob


def sample_action(theta, extra_logits, sbin, n_actions, u):
    """Draw an action from softmax(theta[sbin,:] + extra_logits) using uniform u.

    Explicit sequential loops fix the floating-point evaluation order so the
    pure-Python reference path reproduces the compiled path exactly.
    """
    base = sbin * n_actions
    m = theta[base] + extra_logits[0]
    for a in range(1, n_actions):
        l = theta[base + a] + extra_logits[a]
        if l > m:
            m = l
    ssum = 0.0
    for a in range(n_actions):
        ssum += math.exp(theta[base + a] + extra_logits[a] - m)
    acc = 0.0
    for a in range(n_actions):
        acc += math.exp(theta[base + a] + extra_logits[a] - m) / ssum
        if u < acc:
            return a
    return n_actions - 1


def run_episode(dt, max_steps, v_max, collision_radius, discount,
                step_penalty, success_reward, collision_penalty, progress_reward,
                accels,
                ego_px, ego_py, ego_cum,
                soc_px, soc_py, soc_cum,
                ego_conf_lo, soc_conf_lo,
                gap_lo, gap_hi,
                theta_ego, theta_social, rbf_logits, betas,
                spawn_s, spawn_v, uniforms,
                out_s, out_v, out_bins, out_actions, out_rewards):
    """Run one full episode; returns (steps_taken, outcome_code, ego_return).

    Vehicle 0 is the ego; vehicles 1..n are social. Output arrays are filled
    up to steps_taken (row 0 of out_s/out_v holds the initial state). A social
    vehicle despawns the step it completes its path: it stops moving, stops
    being observed, and cannot collide. Collision takes precedence over
    success when both would trigger on the same step.
    """
    n_social = spawn_s.shape[0]
    n_actions = accels.shape[0]
    ego_goal = ego_cum[ego_cum.shape[0] - 1]
    soc_goal = soc_cum[soc_cum.shape[0] - 1]

    ego_s = 0.0
    ego_v = 0.0
    s = spawn_s.copy()
    v = spawn_v.copy()
    finished = np.zeros(n_social, np.bool_)
    zero_logits = np.zeros(n_actions)

    out_s[0, 0] = ego_s
    out_v[0, 0] = ego_v
    for i in range(n_social):
        out_s[0, 1 + i] = s[i]
        out_v[0, 1 + i] = v[i]

    outcome = TIMEOUT
    ego_return = 0.0
    gamma_t = 1.0
    steps = 0

    for t in range(max_steps):
        # ego observes the unfinished social nearest its conflict entry
        best = 1e300
        obs_gap = 0.0
        obs_speed = 0.0
        present = False
        for i in range(n_social):
            if finished[i]:
                continue
            g = soc_conf_lo - s[i]
            ag = g if g >= 0.0 else -g
            if ag < best:
                best = ag
                obs_gap = g
                obs_speed = v[i]
                present = True
        ego_bin = state_bin(ego_s, ego_v, ego_goal, obs_gap, obs_speed, present,
                            v_max, gap_lo, gap_hi)
        ego_a = sample_action(theta_ego, zero_logits, ego_bin, n_actions,
                              uniforms[t, 0])
        out_bins[t, 0] = ego_bin
        out_actions[t, 0] = ego_a

        # each active social observes the ego
        ego_gap = ego_conf_lo - ego_s
        for i in range(n_social):
            if finished[i]:
                out_bins[t, 1 + i] = -1
                out_actions[t, 1 + i] = -1
                continue
            sbin = state_bin(s[i], v[i], soc_goal, ego_gap, ego_v, True,
                             v_max, gap_lo, gap_hi)
            a = sample_action(theta_social, rbf_logits[i], sbin, n_actions,
                              uniforms[t, 1 + i])
            out_bins[t, 1 + i] = sbin
            out_actions[t, 1 + i] = a

        # dynamics: v' = clamp(v + a*dt, 0, v_max); s' = s + v'*dt
        ego_v2 = ego_v + accels[ego_a] * dt
        if ego_v2 < 0.0:
            ego_v2 = 0.0
        if ego_v2 > v_max:
            ego_v2 = v_max
        ego_s2 = ego_s + ego_v2 * dt

        r_ego = step_penalty + progress_reward * (
            (ego_s2 if ego_s2 < ego_goal else ego_goal) - ego_s) / ego_goal

        for i in range(n_social):
            if finished[i]:
                out_rewards[t, 1 + i] = 0.0
                continue
            a = out_actions[t, 1 + i]
            v2 = v[i] + accels[a] * dt
            if v2 < 0.0:
                v2 = 0.0
            if v2 > v_max:
                v2 = v_max
            s2 = s[i] + v2 * dt
            # dense goal reward: progress fraction, totals 1.0 over the path
            credit = (s2 if s2 < soc_goal else soc_goal) - s[i]
            out_rewards[t, 1 + i] = credit / soc_goal + betas[i] * (-v2 / v_max)
            s[i] = s2
            v[i] = v2
            if s2 >= soc_goal:
                finished[i] = True

        ego_s = ego_s2
        ego_v = ego_v2

        # collision check against active socials, post-move positions
        ex, ey = position_on_path(ego_px, ego_py, ego_cum, ego_s)
        collided = False
        for i in range(n_social):
            if finished[i]:
                continue
            sx, sy = position_on_path(soc_px, soc_py, soc_cum, s[i])
            dx = ex - sx
            dy = ey - sy
            if dx * dx + dy * dy <= collision_radius * collision_radius:
                collided = True
                break

        if collided:
            outcome = COLLISION
            r_ego += collision_penalty
        elif ego_s >= ego_goal:
            outcome = SUCCESS
            r_ego += success_reward

        out_rewards[t, 0] = r_ego
        out_s[t + 1, 0] = ego_s
        out_v[t + 1, 0] = ego_v
        for i in range(n_social):
            out_s[t + 1, 1 + i] = s[i]
            out_v[t + 1, 1 + i] = v[i]

        ego_return += gamma_t * r_ego
        gamma_t *= discount
        steps = t + 1
        if outcome != TIMEOUT:
            break

    return steps, outcome, ego_return


USING_NUMBA = False
if os.environ.get("TJUNCTION_DISABLE_NUMBA", "") != "1":
    try:
        import numba

        position_on_path = numba.njit(**JIT_OPTIONS)(position_on_path)
        state_bin = numba.njit(**JIT_OPTIONS)(state_bin)
        sample_action = numba.njit(**JIT_OPTIONS)(sample_action)
        run_episode = numba.njit(**JIT_OPTIONS)(run_episode)
        USING_NUMBA = True
    except ImportError:
        pass
