import numpy as np
import pytest

from secondorder.gilbert_elliott import GeChannelParams
from secondorder.optimizer import ClientSpec


class CountingRng:
    """Wraps a generator and counts ``random()`` calls."""

    def __init__(self, seed=0):
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    def random(self):
        self.calls += 1
        return float(self._rng.random())


class FixedRng:
    """Returns a fixed sequence of uniforms."""

    def __init__(self, values):
        self.values = list(values)
        self.calls = 0

    def random(self):
        value = self.values[self.calls]
        self.calls += 1
        return value


@pytest.fixture
def counting_rng():
    return CountingRng(0)


@pytest.fixture
def two_sensing_clients():
    return [
        ClientSpec.sensing(GeChannelParams(0.3, 0.3), 0.5, name="a"),
        ClientSpec.sensing(GeChannelParams(0.2, 0.5), 0.25, 2.0, name="b"),
    ]


@pytest.fixture
def mixed_clients():
    return [
        ClientSpec.sensing(GeChannelParams(0.3, 0.4), 0.05, name="s0"),
        ClientSpec.sensing(GeChannelParams(0.5, 0.3), 0.05, name="s1"),
        ClientSpec.streaming(GeChannelParams(0.4, 0.4), 5, 10.0, 100.0, name="v0"),
        ClientSpec.streaming(GeChannelParams(0.2, 0.6), 5, 20.0, 400.0, name="v1"),
    ]


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(
            f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}")
