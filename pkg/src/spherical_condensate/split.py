"""Condensate / normal-fluid splits, smallness parameters and explicit bounds."""
import math
from dataclasses import dataclass, field

import numpy as np

from .dispersion import (
    NonSmoothDispersionError,
    detect_minima,
    torus_delta,
    fd_hessian,
)
from .lattice import LatticeSpec


class InvalidSplitError(ValueError):
    """The proposed partition is not a split of the mode set."""


class LemmaPreconditionError(ValueError):
    """The lattice is too small for the constructive gap argument."""


class InternalInvariantError(RuntimeError):
    """A property guaranteed by construction was found violated."""


@dataclass(frozen=True, eq=False)
class Split:
    """Partition of the modes into condensate and normal fluid.

    ``condensate`` and ``normal`` are sorted integer index arrays into the
    energy table.  ``a`` is the largest condensate energy, ``b`` the smallest
    normal-fluid energy and ``delta = a / b``.
    """

    condensate: np.ndarray
    normal: np.ndarray
    a: float
    b: float
    delta: float
    rho_c: float
    epsilon: float
    tilde_delta: float
    construction: dict = field(default_factory=dict)

    @property
    def V0(self):
        return int(self.condensate.size)

    @property
    def V_plus(self):
        return int(self.normal.size)

    def to_dict(self, lattice=None):
        out = {
            "V0": self.V0,
            "V_plus": self.V_plus,
            "a": self.a,
            "b": self.b,
            "delta": self.delta,
            "rho_c": self.rho_c,
            "epsilon": self.epsilon,
            "tilde_delta": self.tilde_delta,
            "construction": self.construction,
        }
        if lattice is not None:
            out["condensate_modes"] = lattice.modes[self.condensate].tolist()
        else:
            out["condensate_modes"] = self.condensate.tolist()
        return out


def _sum_inverse(e, volume, power=1):
    # fixed-order reduction, independent of how the table was produced
    return float(np.sum(1.0 / e**power)) / volume**power


def make_split(table, condensate, construction=None):
    """Validate a condensate index set and attach the gap data."""
    e = table.e
    mask = np.zeros(table.n_modes, dtype=bool)
    mask[np.asarray(condensate, dtype=np.int64)] = True
    if not mask.any():
        raise InvalidSplitError("condensate set is empty")
    if mask.all():
        raise InvalidSplitError("normal-fluid set is empty")
    if np.any(e[~mask] == 0.0):
        raise InvalidSplitError("a mode with zero excess energy lies outside the condensate")
    a = float(e[mask].max())
    b = float(e[~mask].min())
    if not a < b:
        raise InvalidSplitError(f"no energy gap: max condensate {a} >= min normal {b}")
    cond = np.flatnonzero(mask)
    normal = np.flatnonzero(~mask)
    cond.setflags(write=False)
    normal.setflags(write=False)
    rho_c = _sum_inverse(e[normal], table.volume)
    delta = a / b
    s2 = float(np.sum(1.0 / e[normal] ** 2)) / table.volume**2
    eps = max(2 * delta, s2 / rho_c**2)
    tdelta = 2 * delta + s2 / rho_c**2
    return Split(cond, normal, a, b, delta, rho_c, eps, tdelta, dict(construction or {"kind": "manual"}))


def critical_density(table, split):
    """rho_c = (1/V) sum over normal modes of 1/e_k."""
    e = table.e[split.normal]
    if np.any(e <= 0):
        raise InvalidSplitError("normal fluid contains a zero-energy mode")
    return _sum_inverse(e, table.volume)


def epsilon_and_tilde_delta(table, split):
    """Return ``(epsilon, tilde_delta)``.

    Both use the sum S = (1/(V rho_c)^2) sum_+ e_k^-2: epsilon is
    max(2 delta, S) and tilde_delta is 2 delta + S.
    """
    rho_c = critical_density(table, split)
    e = table.e[split.normal]
    s2 = float(np.sum(1.0 / e**2)) / table.volume**2 / rho_c**2
    return max(2 * split.delta, s2), 2 * split.delta + s2


@dataclass(frozen=True)
class AssumptionReport:
    rho: float
    Delta: float
    delta: float
    epsilon: float
    tilde_delta: float
    V0: int
    delta_ok: bool
    epsilon_ok: bool
    supercritical: bool
    C2: float
    epsilon_limit: float

    @property
    def ok(self):
        return self.supercritical and self.delta_ok and self.epsilon_ok

    def to_dict(self):
        return {
            "rho": self.rho,
            "Delta": self.Delta,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "epsilon_limit": self.epsilon_limit,
            "tilde_delta": self.tilde_delta,
            "V0": self.V0,
            "delta_ok": self.delta_ok,
            "epsilon_ok": self.epsilon_ok,
            "supercritical": self.supercritical,
            "C2": self.C2 if math.isfinite(self.C2) else None,
            "assumptions_hold": self.ok,
        }


def c2_constant(rho, Delta, V0):
    """C2 = 2^4 (rho/Delta)^(V0/2) sqrt((rho + Delta) V0); inf if Delta <= 0."""
    if Delta <= 0:
        return math.inf
    return 16.0 * (rho / Delta) ** (V0 / 2) * math.sqrt((rho + Delta) * V0)


def check_assumptions(table, split, rho):
    """Evaluate the gap and size conditions behind the W2 bound for density ``rho``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    Delta = rho - split.rho_c
    V0 = split.V0
    sup = Delta > 0
    limit = Delta**2 / (32.0 * V0**2 * rho**2) if sup else 0.0
    return AssumptionReport(
        rho=float(rho),
        Delta=float(Delta),
        delta=split.delta,
        epsilon=split.epsilon,
        tilde_delta=split.tilde_delta,
        V0=V0,
        delta_ok=split.delta <= 0.5,
        epsilon_ok=bool(sup and split.epsilon <= limit),
        supercritical=bool(sup),
        C2=c2_constant(rho, Delta, V0),
        epsilon_limit=limit,
    )


# ---------------------------------------------------------------------------
# constructive split


@dataclass(frozen=True)
class LemmaConstants:
    minima: object
    ball_radius: float
    omega2: float
    c0: float
    M: int
    M0: int
    L0: int
    L0_terms: dict


def _hessian_ok(spec, minima, radius, n_dirs=24):
    # check lam-/2 < eig(D^2 omega) < 2 lam+ on a deterministic set of points in each ball
    d = minima.minima[0].k0.size
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(n_dirs, d))
    dirs = np.concatenate([np.eye(d), -np.eye(d), dirs / np.linalg.norm(dirs, axis=1, keepdims=True)])
    f = lambda x: float(spec(x))
    for m in minima.minima:
        for frac in (0.5, 0.99):
            for u in dirs:
                ev = np.linalg.eigvalsh(fd_hessian(f, m.k0 + frac * radius * u))
                if not (ev[0] > minima.lam_minus / 2 and ev[-1] < 2 * minima.lam_plus):
                    return False
    return True


def lemma_constants(spec, d, minima=None, L_ref=None):
    """Constants c0, M, M0 and the minimal lattice size L0 of the gap construction."""
    if not spec.smooth:
        raise NonSmoothDispersionError(
            f"{type(spec).__name__} does not satisfy the smoothness needed by the constructive split"
        )
    if minima is None:
        minima = detect_minima(spec, LatticeSpec(d, 16))
    pts = minima.points
    if len(pts) > 1:
        dist = min(
            np.linalg.norm(torus_delta(pts[i], pts[j]))
            for i in range(len(pts)) for j in range(i + 1, len(pts))
        )
        radius = min(0.25, dist / 2)
    else:
        radius = 0.25
    for _ in range(12):
        if _hessian_ok(spec, minima, radius):
            break
        radius /= 2
    else:
        raise InternalInvariantError("no ball radius satisfies the Hessian comparison")

    if L_ref is None:
        L_ref = int(min(64, max(8, round((2.0e6) ** (1.0 / d)))))
    ref = LatticeSpec(d, L_ref)
    k = ref.k
    far = np.ones(ref.V, dtype=bool)
    for p in pts:
        far &= np.linalg.norm(torus_delta(k, p), axis=1) >= radius
    omega2 = float(spec(k[far]).min())

    lam_m, lam_p = minima.lam_minus, minima.lam_plus
    c0 = lam_p * d / 2
    M = int(math.floor(0.5 + math.sqrt(2 * lam_p * d / lam_m)))
    M0 = len(pts) * (2 * M + 1) ** d
    terms = {
        "ball": math.floor(math.sqrt(d) / (2 * radius)) + 1,
        "energy": math.ceil(math.sqrt(c0 / (omega2 - minima.omega_min))),
        "volume": math.ceil((M0 + 1) ** (1.0 / d) - 1e-12),
    }
    L0 = max(terms.values())
    return LemmaConstants(minima, radius, omega2, c0, M, M0, int(L0), terms)


def default_kappa(d, M0):
    """kappa = (d - 2)/(2 M0 + 1), the choice that optimises the decay exponent."""
    return (d - 2) / (2 * M0 + 1)


def construct_split_lemma(table, spec, kappa=None, enforce_l0=True, constants=None):
    """Split built by the pigeonhole gap argument.

    Candidate set ``e < (c0/2) L^-2``; everything below ``b' = (c0/2) L^(kappa-d)``
    is condensate, and the remaining candidates are scanned for the first
    relative jump of at least ``1/r`` with ``r = L^(-(d-2-kappa)/M0)``.

    With ``enforce_l0=False`` lattices below the construction's ``L0`` are accepted;
    the shortfall is recorded in ``construction`` and the guarantees
    ``delta <= r`` and ``V0 <= M0`` are reported rather than enforced.
    """
    lat = table.lattice
    if lat is None:
        raise ValueError("constructive split needs a geometric lattice")
    d, L = lat.d, lat.L
    if d < 3:
        raise LemmaPreconditionError("constructive split needs d >= 3")
    if constants is None:
        constants = lemma_constants(spec, d)
    c0, M0 = constants.c0, constants.M0
    if kappa is None:
        kappa = default_kappa(d, M0)
    if not (0 < kappa < d / 2) or (d == 3 and not kappa < 1):
        raise LemmaPreconditionError(f"kappa={kappa} outside the admissible range for d={d}")
    below = {name: val for name, val in constants.L0_terms.items() if L < val}
    if below and enforce_l0:
        parts = ", ".join(f"{n}: L >= {v}" for n, v in below.items())
        raise LemmaPreconditionError(f"L={L} below L0={constants.L0} (violated {parts})")

    e = table.e
    cut1 = 0.5 * c0 * L**-2.0
    b_prime = 0.5 * c0 * L ** (kappa - d)
    r = L ** (-(d - 2 - kappa) / M0)
    in1 = e < cut1
    if in1.all():
        raise LemmaPreconditionError("every mode lies in the candidate set; lattice too small")
    in2 = in1 & (e >= b_prime)
    if not in2.any():
        cond = np.flatnonzero(in1)
        j = None
    else:
        # stable order by (energy, mode index)
        idx2 = np.flatnonzero(in2)
        order = idx2[np.argsort(e[idx2], kind="stable")]
        o = np.concatenate([[e[in1 & ~in2].max()], e[order], [e[~in1].min()]])
        j = None
        for i in range(len(o) - 1):
            if o[i] == 0.0 or o[i + 1] / o[i] >= 1.0 / r:
                j = i
                break
        if j is None:
            raise InternalInvariantError("pigeonhole scan found no gap")
        cond = np.flatnonzero(e <= o[j])

    info = {
        "kind": "lemma",
        "kappa": kappa,
        "c0": c0,
        "M": constants.M,
        "M0": M0,
        "L0": constants.L0,
        "L0_terms": constants.L0_terms,
        "ball_radius": constants.ball_radius,
        "omega2": constants.omega2,
        "lambda_minus": constants.minima.lam_minus,
        "lambda_plus": constants.minima.lam_plus,
        "b_prime": b_prime,
        "r": r,
        "j": j,
        "below_L0": sorted(below),
    }
    split = make_split(table, cond, info)
    ok_delta = split.delta <= r * (1 + 1e-12)
    ok_size = split.V0 <= M0
    split.construction["guarantees_hold"] = bool(ok_delta and ok_size)
    if not below and not (ok_delta and ok_size):
        raise InternalInvariantError(
            f"constructed split violates delta <= r ({split.delta} vs {r}) or V0 <= M0 ({split.V0} vs {M0})"
        )
    return split


def construct_split_threshold(table, cut):
    """Condensate = modes with excess energy at most ``cut``."""
    mask = table.e <= cut
    if not mask.any():
        raise InvalidSplitError(f"cut {cut} leaves the condensate empty")
    if mask.all():
        raise InvalidSplitError(f"cut {cut} leaves the normal fluid empty")
    return make_split(table, np.flatnonzero(mask), {"kind": "threshold", "cut": float(cut)})


# ---------------------------------------------------------------------------
# bounds


def p_prime(d, M0):
    """Decay exponent (d/2 - 1)/(2 M0 + 1)."""
    return (d / 2 - 1) / (2 * M0 + 1)


def w2_bound(report, L, d):
    """C2 L^(d/2) epsilon^(1/4); inf when not supercritical."""
    if not report.supercritical:
        return math.inf
    return report.C2 * L ** (d / 2) * report.epsilon**0.25


def w2_bound_mu1prime(report, L, d, eps_tilde):
    """Upper bound on W2(mu0, mu1') for condensate energies below eps_tilde L^-d/(2 rho)."""
    if not report.supercritical:
        return math.inf
    V0 = report.V0
    pref = L ** (d / 2) * 16.0 * math.sqrt((report.rho + report.Delta) * V0)
    return pref * ((report.rho / report.Delta) ** (V0 / 2) * report.epsilon**0.25 + math.sqrt(eps_tilde))


def moment_constant(m, rho, M0):
    """c_m = 2^(2m-1) (m! + M0^m) rho^m bounding local 2m-th moments."""
    return 2.0 ** (2 * m - 1) * (math.factorial(m) + float(M0) ** m) * rho**m


def moment_error_bound(w2, L, d, n, A_n=None, rho=None, M0=None):
    """A_n^(n-1) n W2 L^(-d/2) for a moment of order ``n``."""
    if n < 1:
        raise ValueError("moment order must be >= 1")
    if n == 1:
        A = 1.0
    elif A_n is not None:
        A = A_n
    else:
        if rho is None or M0 is None:
            raise ValueError("need rho and M0 to derive A_n")
        A = moment_constant(n - 1, rho, M0) ** (1.0 / (2 * (n - 1)))
    return A ** (n - 1) * n * w2 * L ** (-d / 2)


@dataclass(frozen=True)
class BoundReport:
    w2_bound: float
    p_prime: float
    moment_bounds: dict
    constants: dict
    vacuous: bool

    def to_dict(self):
        fin = lambda x: x if math.isfinite(x) else None
        return {
            "w2_bound": fin(self.w2_bound),
            "p_prime": self.p_prime,
            "moment_bounds": {str(k): fin(v) for k, v in self.moment_bounds.items()},
            "constants": self.constants,
            "vacuous": self.vacuous,
        }


def bound_report(table, split, rho, orders=(1, 2, 4)):
    """Evaluate the W2 bound, p' and moment budgets for one configuration."""
    lat = table.lattice
    rep = check_assumptions(table, split, rho)
    M0 = split.construction.get("M0", split.V0)
    w2 = w2_bound(rep, lat.L, lat.d)
    mb = {n: moment_error_bound(w2, lat.L, lat.d, n, rho=rho, M0=split.V0) for n in orders}
    return BoundReport(
        w2_bound=w2,
        p_prime=p_prime(lat.d, M0),
        moment_bounds=mb,
        constants={"C2": rep.C2 if math.isfinite(rep.C2) else None, "epsilon": rep.epsilon,
                   "M0": M0, "V0": split.V0},
        vacuous=not rep.ok,
    )
