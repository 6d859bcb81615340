import numpy as np
import pytest

from coolopt.surrogate import train_surrogate
from coolopt.synthetic import Episode, ScenarioConfig, generate_scenario

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


SMALL_EPISODE = Episode(start="2023-01-08T00:00", hours=24.0, multiplier=1.3)


@pytest.fixture(scope="session")
def small_scenario():
    cfg = ScenarioConfig(duration_days=20, episodes=(SMALL_EPISODE,))
    dataset, sidecar = generate_scenario(cfg)
    return cfg, dataset, sidecar


@pytest.fixture(scope="session")
def small_model(small_scenario):
    _, dataset, _ = small_scenario
    return train_surrogate(dataset)


@pytest.fixture(scope="session")
def small_features(small_model, small_scenario):
    return small_model.features(small_scenario[1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
