import time

import pytest
from hypothesis import HealthCheck, settings

from _support import ACCEPTANCE_LINES
from platoongain.params import ControllerParams

settings.register_profile("suite", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@pytest.fixture
def params():
    return ControllerParams()


@pytest.fixture(scope="session")
def surrogate_2000():
    """Fixed-seed 2000-sample dataset and a default-config model trained on it.

    Generated once per session; returns timings alongside the artifacts.
    """
    from platoongain.surrogate import generate_dataset, mlp_train

    t0 = time.perf_counter()
    ds = generate_dataset(2000, seed=0)
    gen_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    model, history = mlp_train(ds)
    train_time = time.perf_counter() - t0
    return {"dataset": ds, "model": model, "history": history,
            "gen_time": gen_time, "train_time": train_time}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
