import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from spherical_condensate.dispersion import (
    Acoustic, Anisotropic, CustomTable, DegenerateMinimumError, DoubledSine, NearestNeighbour,
    NonSmoothDispersionError, ProductShifted, Shifted, detect_minima, dispersion_from_dict,
    energy_table, eval_dispersion, rho_infinity, torus_integral,
)
from spherical_condensate.lattice import build_lattice


def bessel_rho(d, b=1.0):
    # integral of 1/(b sum sin^2) over the torus = int_0^inf (e^{-t/2} I_0(t/2))^d dt / b
    val, _ = integrate.quad(lambda t: special.i0e(t / 2) ** d, 0, np.inf, epsabs=0, epsrel=1e-12,
                            limit=500)
    return val / b


ANALYTIC = [
    NearestNeighbour(), NearestNeighbour(a=0.3, b=2.0), DoubledSine(), Acoustic(),
    Shifted((0.5, 0.0, 0.0)), Shifted((0.25, 0.1, -0.2), base=DoubledSine()),
    ProductShifted((0.5, 0.5, 0.0)), Anisotropic(((1.0, (1, 0, 0)), (0.5, (0, 1, 1)), (2.0, (0, 0, 1))),
                                                  (0.0, 0.0, 0.0)),
]


def test_point_values():
    assert eval_dispersion(NearestNeighbour(), np.zeros(3)) == 0.0
    np.testing.assert_allclose(eval_dispersion(NearestNeighbour(), [0.125]), (1 - math.sqrt(2) / 2) / 2,
                               rtol=1e-14)
    assert abs(eval_dispersion(DoubledSine(), [0.5, 0.5, 0.0])) < 1e-30


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(ANALYTIC), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.integers(-5, 5), min_size=3, max_size=3))
def test_periodic(spec, k, n):
    k = np.array(k)
    assert abs(spec(k) - spec(k + np.array(n))) <= 1e-12 * max(1.0, abs(spec(k)))


def test_nn_unique_minimum():
    for L in (3, 4, 7, 8):
        t = energy_table(NearestNeighbour(a=0.5, b=1.3), build_lattice(3, L))
        assert t.omega0 == 0.5
        assert t.minimizers.tolist() == [t.lattice.index_of(np.zeros(3, int))]
        assert t.e.min() == 0.0 and np.all(t.e >= 0)


@pytest.mark.parametrize("L, count", [(8, 8), (16, 8), (9, 1), (15, 1), (4, 8)])
def test_doubled_sine_ties(L, count):
    t = energy_table(DoubledSine(), build_lattice(3, L))
    assert len(t.minimizers) == count


@pytest.mark.parametrize("L", [4, 5, 8, 11, 16])
def test_nn_lower_bound(L):
    b = 1.7
    t = energy_table(NearestNeighbour(b=b), build_lattice(3, L))
    n2 = np.sum(t.lattice.modes.astype(float) ** 2, axis=1)
    assert np.all(t.e >= 4 * b * n2 / L**2 - 1e-12)


@pytest.mark.parametrize("L", [4, 5, 8, 11, 16])
def test_acoustic_lower_bound(L):
    t = energy_table(Acoustic(), build_lattice(3, L))
    n = np.linalg.norm(t.lattice.modes.astype(float), axis=1)
    assert np.all(t.e >= 2 * n / L - 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(ANALYTIC[:3] + ANALYTIC[4:]), st.integers(3, 9))
def test_minimum_multiplicity(spec, L):
    t = energy_table(spec, build_lattice(3, L))
    assert t.e.min() == 0.0
    assert np.count_nonzero(t.e == 0.0) == np.count_nonzero(t.omega - t.omega0 <= 64 * 2.3e-16 * max(1, np.abs(t.omega).max()))


def test_custom_table_roundtrip(tmp_path):
    lat = build_lattice(3, 4)
    t = energy_table(NearestNeighbour(), lat)
    ct = CustomTable(lat, t.omega + np.linspace(0, 1e-3, lat.V))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    ct.write_csv(p1)
    again = CustomTable.read_csv(p1)
    again.write_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(again.values, ct.values)
    assert dispersion_from_dict({"kind": "custom", "path": str(p1)}).lattice == lat
    np.testing.assert_array_equal(energy_table(again, lat).e, energy_table(ct, lat).e)


def test_custom_table_rejects_off_lattice():
    lat = build_lattice(2, 4)
    ct = CustomTable(lat, np.arange(lat.V, dtype=float))
    assert ct(np.array([0.25, -0.5 + 1])) == ct.values[lat.index_of(np.array([1, 2]))]
    with pytest.raises(ValueError):
        ct(np.array([0.1, 0.0]))
    with pytest.raises(ValueError):
        CustomTable(lat, np.full(lat.V, np.nan))


def test_dict_roundtrip():
    for spec in ANALYTIC:
        again = dispersion_from_dict(spec.to_dict())
        k = np.random.default_rng(0).random((20, 3))
        np.testing.assert_allclose(again(k), spec(k), rtol=1e-15)


def test_minima_nn():
    m = detect_minima(NearestNeighbour(b=1.5), build_lattice(3, 8))
    assert len(m.minima) == 1
    np.testing.assert_allclose(m.points[0], 0, atol=1e-8)
    np.testing.assert_allclose([m.lam_minus, m.lam_plus], 2 * math.pi**2 * 1.5, rtol=1e-5)
    np.testing.assert_allclose(m.minima[0].hessian, 2 * math.pi**2 * 1.5 * np.eye(3), atol=1e-3)


def test_minima_doubled_sine_2d():
    m = detect_minima(DoubledSine(), build_lattice(2, 8))
    pts = {tuple(np.round(np.abs(p), 8)) for p in m.points}
    assert pts == {(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)}


def test_minima_shifted_to_zeta():
    m = detect_minima(Shifted((0.5, 0.0, 0.0)), build_lattice(3, 7))
    assert len(m.minima) == 1
    np.testing.assert_allclose(np.abs(m.points[0]), [0.5, 0, 0], atol=1e-8)


def test_minima_off_lattice_shift():
    zeta = (0.13, -0.31, 0.07)
    m = detect_minima(Shifted(zeta), build_lattice(3, 6))
    np.testing.assert_allclose(m.points[0], zeta, atol=1e-8)
    assert abs(m.omega_min) < 1e-14


def test_minima_refusals():
    with pytest.raises(NonSmoothDispersionError):
        detect_minima(Acoustic(), build_lattice(3, 4))
    # product with zeta = 0 squares the dispersion: Hessian vanishes at 0
    with pytest.raises(DegenerateMinimumError):
        detect_minima(ProductShifted((0.0, 0.0, 0.0)), build_lattice(3, 6))
    with pytest.raises(NonSmoothDispersionError):
        rho_infinity(Acoustic(), 3)


def test_rho_infinity_against_bessel():
    want = bessel_rho(3)
    assert abs(rho_infinity(NearestNeighbour(), 3, tol=1e-7) - want) < 1e-7
    # two-thirds of Watson's cubic-lattice constant
    assert abs(want - 2 / 3 * 1.516386059151978) < 1e-9


def test_rho_infinity_refinement_and_scaling():
    v, err = torus_integral(NearestNeighbour(), 3, tol=1e-6)
    assert err <= 1e-6
    half = rho_infinity(NearestNeighbour(b=2.0), 3)
    assert abs(half - v / 2) < 2e-6


def test_rho_infinity_d4():
    assert abs(rho_infinity(NearestNeighbour(), 4, tol=1e-6) - bessel_rho(4)) < 1e-6


def test_doubled_sine_matches_nn():
    # k -> 2k mod 1 preserves Lebesgue measure on the torus, so both integrals agree
    v, err = torus_integral(DoubledSine(), 3, tol=1e-6)
    assert abs(v - bessel_rho(3)) < 1e-6


def test_integral_diverges_below_three():
    with pytest.raises(ValueError):
        torus_integral(NearestNeighbour(), 2)
