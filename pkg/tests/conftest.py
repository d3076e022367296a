import copy

import pytest

from ictrade.model import build_scenario
from ictrade.synth import default_config, generate_series, single_ic_config, synthetic_park


@pytest.fixture(scope="session")
def park24():
    """Four-cluster synthetic park, one day."""
    return synthetic_park(horizon=24, seed=0)


@pytest.fixture(scope="session")
def park2():
    """Two clusters (1 sells gas to 2 through p12), one day."""
    return synthetic_park(horizon=24, seed=0, n_ics=2)


@pytest.fixture
def config4():
    return copy.deepcopy(default_config())


@pytest.fixture
def series4():
    return generate_series(24, [1, 2, 3, 4], seed=0)


@pytest.fixture(scope="session")
def one_ic():
    model = build_scenario(single_ic_config(), generate_series(24, [1], seed=0))
    return model


def zero_series(horizon, ids):
    cols = {"p_e": [0.0] * horizon, "p_o": [0.0] * horizon, "p_g": [0.0] * horizon, "p_c": [0.0] * horizon}
    for i in ids:
        cols[f"e_load_{i}"] = [0.0] * horizon
        cols[f"h_load_{i}"] = [0.0] * horizon
        cols[f"pv_{i}"] = [0.0] * horizon
    return cols


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; every recorded line is repeated in the terminal summary."""

    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
