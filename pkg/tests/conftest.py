import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenematch.graph import synth_dataset  # noqa: E402
from scenematch.train import TrainConfig, train  # noqa: E402

# desk-scale toy run shared by the training and acceptance tests
TOY_CONFIG = dict(d=16, K=8, alpha_init=5.0, beta_init=0.0, delta=0.3, margin=0.2, batch_size=64,
                  epochs=200, learning_rate=5e-3, lr_decay_epoch=150, seed=0, val_fraction=0.0)

_criteria: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.passed else "FAIL"
        if _criteria.get(name) != "FAIL":
            _criteria[name] = status


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _criteria.items():
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data():
    return synth_dataset(1, 64, 4, 5, 16)


@pytest.fixture(scope="session")
def toy_run(toy_data):
    config = TrainConfig(**TOY_CONFIG)
    start = time.perf_counter()
    state = train(config, toy_data)
    return config, state, time.perf_counter() - start
