"""Simulator tests: kinematics oracles, parity, determinism, invariants."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from tjunction.errors import ConfigError
from tjunction.policies import meta_policy, tabular_policy
from tjunction.simulator import (
    GAP_HI,
    GAP_LO,
    OUTCOMES,
    ScenarioConfig,
    draw_episode_randomness,
    mean_social_speed,
    reference_rollout,
    reset,
    rollout,
    step,
)


def brute_force_full_throttle_steps(goal, dt=0.2, v_max=10.0, accel=2.0,
                                    max_steps=100):
    """Independent integration of v' = clamp(v + a dt), s' = s + v' dt."""
    s, v = 0.0, 0.0
    for n in range(1, max_steps + 1):
        v = min(max(v + accel * dt, 0.0), v_max)
        s = s + v * dt
        if s >= goal:
            return n
    return None


class FixedPolicy:
    """Always the same action index; matches the sampling interface."""

    def __init__(self, action, n_actions=4):
        self.theta = np.full(1024 * n_actions, -1e9)
        self.theta.reshape(1024, n_actions)[:, action] = 0.0

    def rbf_logits(self, beta):
        return None


class TestKinematicsOracle:
    def test_empty_junction_full_throttle_reaches_goal_at_oracle_step(self):
        # straight 60 m approach, no social traffic: analytic kinematics only
        cfg = ScenarioConfig(ego_path=((0.0, -60.0), (0.0, 0.0)), n_social=0)
        assert cfg.ego_goal == pytest.approx(60.0)
        oracle = brute_force_full_throttle_steps(60.0)
        assert oracle == 42
        rec = rollout(cfg, FixedPolicy(3), meta_policy(), [], seed=0)
        assert rec.outcome == "success"
        assert rec.steps == oracle

    def test_default_geometry_oracle(self):
        cfg = ScenarioConfig(n_social=0)
        oracle = brute_force_full_throttle_steps(cfg.ego_goal)
        rec = rollout(cfg, FixedPolicy(3), meta_policy(), [], seed=0)
        assert rec.outcome == "success"
        assert rec.steps == oracle

    def test_full_brake_never_moves(self):
        cfg = ScenarioConfig(n_social=0)
        rec = rollout(cfg, FixedPolicy(0), meta_policy(), [], seed=0)
        assert rec.outcome == "timeout"
        assert np.all(rec.s[:, 0] == 0.0)
        assert np.all(rec.v[:, 0] == 0.0)


class TestParity:
    @pytest.mark.parametrize("seed", [0, 1, 17, 123456])
    def test_reference_path_matches_kernel_bitwise(self, seed):
        cfg = ScenarioConfig()
        ego = tabular_policy(cfg.n_actions)
        soc = meta_policy(cfg.n_actions)
        betas = [0.5, 2.5]
        fast = rollout(cfg, ego, soc, betas, seed)
        slow = reference_rollout(cfg, ego, soc, betas, seed)
        assert fast.to_jsonl() == slow.to_jsonl()
        assert fast.outcome == slow.outcome
        assert np.array_equal(fast.s, slow.s)
        assert np.array_equal(fast.v, slow.v)
        assert np.array_equal(fast.rewards, slow.rewards)

    def test_parity_with_trained_meta(self, scenario, meta):
        ego = tabular_policy(scenario.n_actions)
        fast = rollout(scenario, ego, meta, [1.3, -0.7], 99)
        slow = reference_rollout(scenario, ego, meta, [1.3, -0.7], 99)
        assert fast.to_jsonl() == slow.to_jsonl()


class TestDeterminism:
    def test_same_seed_same_record(self):
        cfg = ScenarioConfig()
        ego = tabular_policy(cfg.n_actions)
        soc = meta_policy(cfg.n_actions)
        a = rollout(cfg, ego, soc, [1.0, 1.0], 7)
        b = rollout(cfg, ego, soc, [1.0, 1.0], 7)
        assert a.to_jsonl() == b.to_jsonl()

    def test_different_seeds_differ(self):
        cfg = ScenarioConfig()
        ego = tabular_policy(cfg.n_actions)
        soc = meta_policy(cfg.n_actions)
        lines = {rollout(cfg, ego, soc, [1.0, 1.0], s).to_jsonl() for s in range(8)}
        assert len(lines) > 1

    def test_spawn_draws_within_ranges_and_deterministic(self):
        spawn_s, spawn_v, uniforms = draw_episode_randomness(
            ScenarioConfig(n_social=2), 5)
        assert spawn_s.shape == (2,) and spawn_v.shape == (2,)
        assert np.all((spawn_s >= 0.0) & (spawn_s <= 45.0))
        assert np.all((spawn_v >= 4.0) & (spawn_v <= 8.0))
        assert uniforms.shape == (100, 3)
        again = draw_episode_randomness(ScenarioConfig(n_social=2), 5)
        assert np.array_equal(uniforms, again[2])


class TestStepSemantics:
    def test_collision_takes_precedence_over_success(self):
        # craft a state where one step crosses the ego goal AND the collision
        # circle: social parked 0.5 m short of the ego's end point
        cfg = ScenarioConfig(n_social=1)
        state = replace(
            reset(cfg, [0.0], seed=0),
            ego_s=55.0, ego_v=cfg.v_max,
            social_s=np.array([95.5]), social_v=np.array([0.0]))
        new_state, r_ego, _, outcome = step(cfg, state, 3, [0])
        assert new_state.ego_s >= cfg.ego_goal  # success condition also held
        assert outcome == "collision"
        assert r_ego == pytest.approx(
            cfg.step_penalty
            + cfg.progress_reward * (cfg.ego_goal - 55.0) / cfg.ego_goal
            + cfg.collision_penalty)

    def test_social_despawn_before_collision_check(self):
        # a social that finishes its route this step cannot collide, even if
        # its clamped end position would sit inside the ego's circle
        cfg = ScenarioConfig(n_social=1)
        state = replace(
            reset(cfg, [0.0], seed=0),
            ego_s=54.0, ego_v=0.0,
            social_s=np.array([95.8]), social_v=np.array([8.0]))
        new_state, _, _, outcome = step(cfg, state, 0, [3])
        assert new_state.finished[0]
        assert outcome is None

    def test_outcome_codes_match_names(self):
        assert OUTCOMES == ("timeout", "success", "collision")

    def test_gamma_zero_returns_first_reward(self):
        cfg = ScenarioConfig(n_social=0)
        rec = rollout(cfg, FixedPolicy(3), meta_policy(), [], 0, discount=0.0)
        assert rec.discounted_return == pytest.approx(rec.rewards[0, 0])


class TestEgoReward:
    def test_success_return_decomposes(self):
        cfg = ScenarioConfig(n_social=0)
        rec = rollout(cfg, FixedPolicy(3), meta_policy(), [], 0, discount=1.0)
        total = rec.rewards[:rec.steps, 0].sum()
        expected = (cfg.step_penalty * rec.steps
                    + cfg.progress_reward * 1.0
                    + cfg.success_reward)
        assert total == pytest.approx(expected, abs=1e-9)

    def test_timeout_accumulates_step_penalties_only(self):
        cfg = ScenarioConfig(n_social=0)
        rec = rollout(cfg, FixedPolicy(0), meta_policy(), [], 0, discount=1.0)
        assert rec.rewards[:rec.steps, 0].sum() == pytest.approx(
            cfg.step_penalty * cfg.max_steps)


class TestSocialReward:
    def test_progress_fractions_sum_to_one_over_full_route(self):
        cfg = ScenarioConfig(n_social=1, spawn_s=(0.0, 0.0), spawn_v=(8.0, 8.0),
                             max_steps=100)
        rec = rollout(cfg, FixedPolicy(0), FixedPolicy(3), [0.0], 0, discount=1.0)
        # beta = 0 kills the speed term; what remains is the progress fraction
        assert rec.rewards[:rec.steps, 1].sum() == pytest.approx(1.0, abs=1e-9)

    def test_beta_scales_speed_penalty(self):
        cfg = ScenarioConfig(n_social=1, spawn_s=(10.0, 10.0), spawn_v=(6.0, 6.0))
        r0 = rollout(cfg, FixedPolicy(0), FixedPolicy(2), [0.0], 0, discount=1.0)
        r2 = rollout(cfg, FixedPolicy(0), FixedPolicy(2), [2.0], 0, discount=1.0)
        active = r0.bins[:, 1] >= 0
        speed_term = -(r0.v[1:1 + r0.steps, 1][active[:r0.steps]] / cfg.v_max).sum()
        assert (r2.rewards[:, 1].sum() - r0.rewards[:, 1].sum()
                == pytest.approx(2.0 * speed_term, rel=1e-9))


class TestValidation:
    def test_wrong_beta_count_rejected(self):
        cfg = ScenarioConfig(n_social=2)
        with pytest.raises(ConfigError):
            reset(cfg, [1.0], seed=0)

    def test_parallel_paths_rejected(self):
        with pytest.raises(ConfigError, match="never come within"):
            ScenarioConfig(ego_path=((0.0, -30.0), (60.0, -30.0)))

    def test_two_crossings_rejected(self):
        zigzag = ((-10.0, -5.0), (10.0, 5.0), (20.0, -5.0), (40.0, 5.0))
        with pytest.raises(ConfigError, match="more than one conflict region"):
            ScenarioConfig(ego_path=zigzag)

    def test_bad_spawn_range_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(spawn_s=(10.0, 5.0))

    def test_gap_feature_range_constants(self):
        assert GAP_LO < 0 < GAP_HI


class TestRecord:
    def test_jsonl_round_trips(self):
        cfg = ScenarioConfig()
        rec = rollout(cfg, tabular_policy(), meta_policy(), [1.0, 1.0], 3)
        lines = rec.to_jsonl().splitlines()
        header = json.loads(lines[0])
        assert header["outcome"] in OUTCOMES
        assert header["seed"] == 3
        assert len(header["betas"]) == 2
        assert len(lines) == 1 + rec.steps
        row = json.loads(lines[1])
        assert row["t"] == 0
        assert row["s"] == [float(x) for x in rec.s[1]]

    def test_mean_social_speed_over_active_steps(self):
        cfg = ScenarioConfig(n_social=1, spawn_s=(0.0, 0.0), spawn_v=(6.0, 6.0))
        rec = rollout(cfg, FixedPolicy(0), FixedPolicy(2), [0.0], 0)
        m = mean_social_speed([rec])
        active = rec.bins[:rec.steps, 1] >= 0
        assert m == pytest.approx(rec.v[1:1 + rec.steps, 1][active].mean())
