import pytest
from hypothesis import settings

from coldrabi.lattice import LatticeConfig

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])


@pytest.fixture(scope="session")
def rb_lin():
    """Rb87 F=1 in a 787 nm lin-theta-lin lattice at V0 = 1e5 E_r, no fields."""
    return LatticeConfig.from_coupling_wavelength("LinThetaLin", 787e-9, species="Rb87-F1", V0=1e5)
