"""Quadrature ground truth for tiny mode sets.

Writing s_k = |Phi_k|^2, each complex mode contributes a flat measure
(pi ds_k) once its phase is integrated out.  The spherical measure then has
density proportional to exp(-(1/V) sum_k e_k s_k) on the simplex
{s >= 0, sum_k s_k = rho V^2}; the factorised measures reduce to products
of exponential laws (normal fluid) and tilted uniform simplices (condensate).
"""
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy import integrate, special


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SmallSystem:
    """Mode energies (min 0), effective volume V and density rho."""

    energies: tuple
    V: float
    rho: float

    def __post_init__(self):
        e = tuple(float(x) for x in self.energies)
        if not 2 <= len(e) <= 4:
            raise ValueError("small systems have 2 to 4 modes")
        if min(e) != 0.0 or any(x < 0 for x in e):
            raise ValueError("energies must be >= 0 with minimum 0")
        if not (self.V > 0 and self.rho > 0):
            raise ValueError("V and rho must be positive")
        object.__setattr__(self, "energies", e)

    @property
    def n(self):
        return len(self.energies)

    @property
    def mass(self):
        return self.rho * self.V**2


_QUAD = {"epsabs": 0.0, "epsrel": 1e-11, "limit": 200}


def _simplex_expectation(f, n):
    """Integral of f(t) over the unit (n-1)-simplex in barycentric coordinates
    t = (t_1, ..., t_{n-1}, 1 - sum); iterated adaptive 1-D quadrature."""
    if n == 1:
        return f(np.array([1.0]))

    def inner(prefix, left):
        j = len(prefix)
        if j == n - 2:
            def g(x):
                return f(np.array(prefix + [x, left - x]))
            val, err = integrate.quad(g, 0.0, left, **_QUAD)
            return val
        def h(x):
            return inner(prefix + [x], left - x)
        val, err = integrate.quad(h, 0.0, left, **_QUAD)
        return val

    return inner([], 1.0)


def oracle_mass_moments(system, exponents):
    """<prod_k s_k^{m_k}> under the spherical measure of ``system``."""
    m = np.asarray(exponents, dtype=int)
    if m.shape != (system.n,) or np.any(m < 0):
        raise ValueError("one non-negative exponent per mode")
    if m.sum() > 6:
        raise ValueError("total degree above 6 not supported")
    e = np.array(system.energies)
    c = system.rho * system.V  # (1/V) * rho V^2
    R = system.mass
    # shift so the exponent is <= 0 on the simplex (better conditioning)
    w = lambda t: math.exp(-c * float(t @ e))
    num = _simplex_expectation(lambda t: float(np.prod(t**m)) * w(t), system.n)
    den = _simplex_expectation(w, system.n)
    if not (np.isfinite(num) and np.isfinite(den) and den > 0):
        raise OracleError("quadrature failed")
    return R ** int(m.sum()) * num / den


def two_mode_closed_form(system, exponents):
    """Closed form for n = 2 via lower incomplete gamma functions."""
    if system.n != 2:
        raise ValueError("closed form only for two modes")
    m0, m1 = (int(x) for x in exponents)
    e0, e1 = system.energies
    lam = system.rho * system.V * (e1 - e0)  # density of t1 is exp(-lam t1) on [0,1]

    def mom(k):
        if lam == 0:
            return 1.0 / (k + 1)
        return special.gammainc(k + 1, lam) * special.gamma(k + 1) / lam ** (k + 1)

    # (1 - t)^m0 t^m1 expanded
    num = sum(math.comb(m0, j) * (-1) ** j * mom(m1 + j) for j in range(m0 + 1))
    return system.mass ** (m0 + m1) * num / mom(0)


def second_order_exponents(n):
    """All exponent vectors of total degree 1 and 2."""
    out = []
    for k in range(n):
        v = [0] * n
        v[k] = 1
        out.append(tuple(v))
    for i, j in combinations_with_replacement(range(n), 2):
        v = [0] * n
        v[i] += 1
        v[j] += 1
        out.append(tuple(v))
    return out


def critical_density_small(system, condensate):
    e = np.array(system.energies)
    normal = [k for k in range(system.n) if k not in set(condensate)]
    return float(np.sum(1.0 / e[normal])) / system.V


def _gaussian_part(system, normal, m):
    e = np.array(system.energies)
    out = 1.0
    for k in normal:
        out *= math.factorial(m[k]) * (system.V / e[k]) ** m[k]
    return out


def oracle_field_moment(system, condensate, measure, exponents):
    """<prod_k |Phi_k|^{2 m_k}> under mu0, mu_plus, mu1' or mu1.

    ``condensate`` lists the condensate mode positions of the split.
    """
    m = [int(x) for x in exponents]
    if len(m) != system.n or min(m) < 0:
        raise ValueError("one non-negative exponent per mode")
    if measure == "mu0":
        return oracle_mass_moments(system, m)
    cond = sorted(int(k) for k in condensate)
    normal = [k for k in range(system.n) if k not in cond]
    if not cond or not normal:
        raise ValueError("split needs both parts nonempty")
    gauss = _gaussian_part(system, normal, m)
    if measure == "mu_plus":
        if any(m[k] for k in cond):
            raise ValueError("normal-fluid measure has no condensate modes")
        return gauss
    rho_c = critical_density_small(system, cond)
    Delta = system.rho - rho_c
    if not Delta > 0:
        raise ValueError("not supercritical")
    R0 = Delta * system.V**2
    mc = np.array([m[k] for k in cond])
    V0 = len(cond)
    if measure == "mu1prime":
        # uniform simplex fractions: Dirichlet(1, ..., 1)
        val = math.gamma(V0) * np.prod([math.factorial(x) for x in mc]) / math.gamma(V0 + mc.sum())
        return gauss * R0 ** int(mc.sum()) * val
    if measure == "mu1":
        e = np.array(system.energies)
        e0 = e[cond]
        e_plus = e[normal]

        def logW(t):
            E0 = R0 * float(t @ e0) / system.V
            x = E0 / (system.V * Delta * e_plus)
            return -E0 * (1 + rho_c / Delta) - float(np.sum(np.log1p(-x)))

        num = _simplex_expectation(lambda t: float(np.prod(t**mc)) * math.exp(logW(t)), V0)
        den = _simplex_expectation(lambda t: math.exp(logW(t)), V0)
        return gauss * R0 ** int(mc.sum()) * num / den
    raise ValueError(f"unknown measure {measure!r}")


class UnsupportedObservable(OracleError):
    pass


def oracle_field_moment_phase(system, condensate, measure, exponents, conj_exponents):
    """<prod_k Phi_k^{p_k} conj(Phi_k)^{q_k}>; only gauge-invariant (p = q) monomials are supported."""
    if list(exponents) != list(conj_exponents):
        raise UnsupportedObservable("monomial is not gauge invariant (its expectation vanishes)")
    return oracle_field_moment(system, condensate, measure, exponents)
