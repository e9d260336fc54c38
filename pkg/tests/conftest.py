import numpy as np
import pytest

from spherical_condensate.dispersion import NearestNeighbour, energy_table, rho_infinity
from spherical_condensate.lattice import build_lattice
from spherical_condensate.split import construct_split_threshold


@pytest.fixture(scope="session")
def nn_rho_inf():
    return rho_infinity(NearestNeighbour(), 3)


@pytest.fixture(scope="session")
def nn8(nn_rho_inf):
    """NearestNeighbour d=3 L=8 with the k=0 condensate and rho = rho_inf + 1."""
    table = energy_table(NearestNeighbour(), build_lattice(3, 8))
    split = construct_split_threshold(table, 0.0)
    return table, split, nn_rho_inf + 1.0


def random_field(rng, V, size=None):
    shape = (V,) if size is None else (size, V)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


ACCEPTANCE = []


def record(number, ok, detail):
    """Log one acceptance-criterion outcome for the end-of-run summary."""
    ACCEPTANCE.append((number, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
