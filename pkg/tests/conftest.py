import numpy as np
import pytest

from sbdkit.kernels import Gaussian, TopHat
from sbdkit.model import Dispersal, ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dependent_params():
    """Density-dependent instance; a+ reach plus b+ reach stays inside phi's support."""
    return ModelParams(
        m=2.0, kappa=0.7,
        a_plus=TopHat(height=0.5, radius=1.0),
        phi=TopHat(height=0.4, radius=2.0),
        b_plus=Gaussian(mass=0.3, sigma=0.1),
        dispersal=Dispersal.DEPENDENT,
    )


_ACCEPTANCE: dict[int, str] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}".splitlines()[0]
        _ACCEPTANCE[self.number] = f"criterion {self.number} [{self.title}]: {status}  {detail}"
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records one pass/fail line for the summary."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
