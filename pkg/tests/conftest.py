import numpy as np
import pytest

from entrobound.geometry import Box
from entrobound.kernels import TabulatedModel
from entrobound.pipeline import av_model, example1_model


def uniform_tabulated(dim=1, nodes=3, K=2):
    """Tabulated model whose kernel and initial density are both uniform on the unit box."""
    q0 = np.ones((nodes,) * dim)
    q = np.ones((nodes,) * (2 * dim))
    return TabulatedModel(Box.unit(dim), q0, q, K, 1.0, 0.0)


@pytest.fixture(scope="session")
def gauss():
    return example1_model()


@pytest.fixture(scope="session")
def av():
    return av_model(phi=2.3, K=3)


# one PASS/FAIL line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail=""):
        prev = ACCEPTANCE.get(number)
        ok = bool(ok) and (prev is None or prev[0])
        detail = detail if prev is None else f"{prev[1]}; {detail}"
        ACCEPTANCE[number] = (ok, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
