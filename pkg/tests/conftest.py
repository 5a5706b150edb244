import pytest

from igcrn.dataset import SimConfig, simulate
from igcrn.model import ModelConfig

TINY_SIM = SimConfig(n_train=4, n_val=1, n_test=3, duration=0.8, t60=0.2, seed=3)
TINY_MODEL = ModelConfig(base_channels=2, lstm_hidden=4)

ACCEPTANCE_COUNT = 10
_verdicts: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    simulate(TINY_SIM, out)
    return str(out)


@pytest.fixture
def verdict():
    """Record the outcome of one acceptance criterion and fail the test when it is not met."""
    def record(number: int, ok: bool, detail: str) -> None:
        prev = _verdicts.get(number)
        if prev is not None:
            ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
        _verdicts[number] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in _verdicts:
            ok, detail = _verdicts[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (not evaluated)")
