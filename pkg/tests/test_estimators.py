import math

import numpy as np
import pytest

from spherical_condensate import estimators as E
from spherical_condensate.dispersion import NearestNeighbour, energy_table, energy_table_from_values
from spherical_condensate.lattice import build_lattice
from spherical_condensate.oracle import SmallSystem
from spherical_condensate.split import construct_split_threshold, critical_density, make_split

O = (0, 0, 0)


def within(est, want, k=3.0):
    return abs(est.value - want) <= k * est.std_error + 1e-12


def test_moment_spec():
    sp = E.MomentSpec((((9, 0, -1), 1), ((1, 1, 1), -1)))
    assert sp.n == 2
    assert sp.wrapped(8).entries[0][0] == (1, 0, -1)
    assert E.MomentSpec.power(O, 2).n == 4
    with pytest.raises(ValueError):
        E.MomentSpec(())
    with pytest.raises(ValueError):
        E.MomentSpec(((O, 0),))


def test_normal_fluid_position_moments(nn8):
    t, s, _ = nn8
    sampler = E.sampler_for("mu_plus", t, s)
    a, b = E.estimate_moments(sampler, [E.MomentSpec(((O, 1),)), E.MomentSpec.power(O, 1)],
                              20_000, 0, t.lattice)
    assert within(a, 0.0) and abs(a.value.imag) <= 3 * a.std_error
    assert within(b, s.rho_c)
    assert a.method == "jackknife" and a.extra["n_shifts"] == 16


def test_mu1_density_single_condensate(nn8):
    t, s, rho = nn8
    est = E.estimate_moment(E.sampler_for("mu1", t, s, rho), E.MomentSpec.power(O, 1), 20_000, 1, t.lattice)
    assert within(est, rho)


def test_jackknife_vs_batch(nn8):
    t, s, _ = nn8
    est = E.estimate_moment(E.sampler_for("mu_plus", t, s), E.MomentSpec.power((1, 2, 3), 2), 20_000, 2,
                            t.lattice)
    assert 0.5 <= est.std_error / est.extra["batch_se"] <= 2.0


def test_full_average_matches_shifts(nn8):
    t, s, rho = nn8
    sp = [E.MomentSpec.power(O, 1)]
    full = E.estimate_moments(E.sampler_for("mu0", t, s, rho), sp, 4000, 3, t.lattice, n_shifts=None)[0]
    # translation averaging over every site gives N/V = rho exactly
    assert abs(full.value - rho) < 1e-9 and full.std_error < 1e-9


def test_worker_count_invariance(nn8):
    t, s, rho = nn8
    sp = [E.MomentSpec.power(O, 1), E.MomentSpec(((O, 1), ((1, 0, 0), -1)))]
    a = E.estimate_moments(E.sampler_for("mu1", t, s, rho), sp, 3000, 4, t.lattice, chunk=500, workers=1)
    b = E.estimate_moments(E.sampler_for("mu1", t, s, rho), sp, 3000, 4, t.lattice, chunk=500, workers=2)
    assert [x.value for x in a] == [x.value for x in b]
    assert [x.std_error for x in a] == [x.std_error for x in b]


def test_exact_covariance(nn8):
    t, s, _ = nn8
    assert abs(E.normal_fluid_covariance_exact(t, s, np.zeros(3, int)) - critical_density(t, s)) < 1e-12
    t7 = energy_table(NearestNeighbour(), build_lattice(3, 7))
    s7 = construct_split_threshold(t7, 0)
    for r in ([1, 0, 0], [2, -1, 3], [3, 3, 3]):
        assert abs(E.normal_fluid_covariance_exact(t7, s7, np.array(r)).imag) < 1e-14


def test_exact_covariance_vs_mc(nn8):
    t, s, _ = nn8
    r = (1, 0, 0)
    est = E.estimate_moment(E.sampler_for("mu_plus", t, s), E.MomentSpec(((O, 1), (r, -1))), 20_000, 5,
                            t.lattice)
    want = E.normal_fluid_covariance_exact(t, s, np.array(r))
    assert abs(est.value - want) <= 3 * est.std_error * math.sqrt(2)


def test_gff_covariance(nn_rho_inf):
    sp = NearestNeighbour()
    c0 = E.critical_gff_covariance(sp, 3, np.zeros(3), tol=1e-6)
    assert abs(c0 - nn_rho_inf) < 2e-6
    r = np.array([1, 2, 0])
    a = E.critical_gff_covariance(sp, 3, r, tol=1e-7)
    b = E.critical_gff_covariance(sp, 3, -r, tol=1e-7)
    assert abs(a - np.conj(b)) < 1e-12
    coarse = E.critical_gff_covariance(sp, 3, np.array([1, 0, 0]), tol=1e-5)
    fine = E.critical_gff_covariance(sp, 3, np.array([1, 0, 0]), tol=1e-8)
    assert abs(coarse - fine) < 5e-5


def test_w2_estimate(nn8):
    t, s, rho = nn8
    a = E.estimate_w2_upper_main(t, s, rho, 2000, 6)
    b = E.estimate_w2_upper_main(t, s, rho, 8000, 6)
    assert a.value >= 0 and a.coupling_cost >= 0
    assert a.value <= a.analytic_bound and a.assumptions_hold
    # V0 = 1 and all weights one: only the transport term contributes
    assert a.term_weight == 0.0 and a.extra["diagonal_fraction"] == 1.0
    assert 1.5 <= a.std_error / b.std_error <= 2.6  # four times the draws, about half the error


def test_w2_two_mode_condensate():
    t = energy_table_from_values([0.0, 0.002, 1.0, 1.5, 2.0, 3.0], 50)
    s = make_split(t, [0, 1])
    rho = s.rho_c + 0.3
    est = E.estimate_w2_upper_main(t, s, rho, 4000, 7)
    assert 0 < est.extra["diagonal_fraction"] < 1
    assert est.term_weight > 0
    # the upper-bound expression dominates the coupling's own transport cost
    assert est.value >= est.coupling_cost - 3 * math.hypot(est.std_error, est.coupling_cost_se)


def test_gamma1_estimate():
    t = energy_table_from_values([0.0, 0.001, 1.0, 1.5, 2.0, 3.0], 50)
    s = make_split(t, [0, 1])
    rho = s.rho_c + 0.3
    g = E.estimate_w2_gamma1(t, s, rho, 4000, 8)
    assert g.preconditions_hold
    assert g.w2_mu1_mu1prime <= g.bound_mu1_mu1prime
    assert g.eps_tilde == pytest.approx(2 * rho * 50 * 0.001)


def test_compare_moments(nn8):
    t, s, rho = nn8
    specs = [E.MomentSpec(((O, 1),)), E.MomentSpec(((O, 1), (O, 1), (O, -1))), E.MomentSpec.power(O, 1)]
    rows = E.compare_mu0_mu1_moments(t, s, rho, specs, 4000, 9)
    odd1, odd3, even = rows
    for r in (odd1, odd3):
        assert abs(r.mu0) <= 3 * r.mu0_se * math.sqrt(2) and abs(r.mu1) <= 3 * r.mu1_se * math.sqrt(2)
    assert not any(r.violation for r in rows)
    assert even.budget > even.combined_se
    row = even.to_row()
    assert set(row) >= {"difference", "budget", "combined_se", "violation"}


def test_oracle_harness():
    rows = E.check_against_oracle(SmallSystem((0.0, 0.1, 1.0), 3, 2.0), "mu0", 50_000, 10)
    assert len(rows) == 9 and all(r.passed for r in rows)
    assert E.check_against_oracle(SmallSystem((0.0, 1.0), 2, 0.5), "mu0", 100, 0) is None
