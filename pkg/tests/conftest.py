"""Shared fixtures: one trained guide set reused across test modules.

Training the five social baselines and the meta policy costs a few seconds;
session scope amortizes that over every test that needs realistic guides.
Tests must not mutate these policies (copy first).
"""

import sys

import pytest

from tjunction.pipeline import GuideSet
from tjunction.policies import BaselineSet, DEFAULT_BASELINE_BETAS
from tjunction.simulator import ScenarioConfig
from tjunction.training import TrainConfig, train_meta, train_social

GUIDE_SEED = 11


@pytest.fixture(scope="session")
def scenario():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def baselines(scenario):
    policies = tuple(
        train_social(b, TrainConfig(updates=120, seed=GUIDE_SEED), scenario)[0]
        for b in DEFAULT_BASELINE_BETAS)
    return BaselineSet(DEFAULT_BASELINE_BETAS, policies, 0.5)


@pytest.fixture(scope="session")
def meta(baselines, scenario):
    policy, _ = train_meta(
        baselines, (-1.0, 3.0),
        TrainConfig(updates=300, lambda_reg=20.0, seed=GUIDE_SEED), scenario)
    return policy


@pytest.fixture(scope="session")
def guides(baselines, meta):
    return GuideSet(baselines, meta)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion whenever that suite ran."""
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.STARTED:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
