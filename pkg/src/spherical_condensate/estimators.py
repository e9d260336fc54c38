"""Monte Carlo and deterministic estimators built on the samplers."""
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import measures
from .dispersion import torus_integral
from .lattice import idft_at, idft_full, wrap
from .split import check_assumptions, moment_error_bound, w2_bound, w2_bound_mu1prime
from .streams import check_rng, run_chunks


@dataclass(frozen=True)
class MomentSpec:
    """Ordered (x, tau) pairs; tau = +1 for phi_x and -1 for its conjugate."""

    entries: tuple

    def __post_init__(self):
        ent = tuple((tuple(int(c) for c in x), int(t)) for x, t in self.entries)
        if not ent:
            raise ValueError("moment needs at least one factor")
        if any(t not in (1, -1) for _, t in ent):
            raise ValueError("tau must be +1 or -1")
        object.__setattr__(self, "entries", ent)

    @property
    def n(self):
        return len(self.entries)

    def wrapped(self, L):
        return MomentSpec(tuple((tuple(wrap(np.array(x), L).tolist()), t) for x, t in self.entries))

    @property
    def label(self):
        return " ".join(f"{'' if t > 0 else '*'}{list(x)}" for x, t in self.entries)

    @classmethod
    def power(cls, x, m):
        """|phi_x|^(2m)."""
        return cls(tuple([(tuple(x), 1)] * m + [(tuple(x), -1)] * m))


@dataclass(frozen=True)
class EstimateWithError:
    value: complex
    std_error: float
    n_samples: int
    method: str
    extra: dict = field(default_factory=dict)


def _size(table):
    # (L, d) for the L^(d/2) factors; abstract mode sets use L^(d/2) = V^(1/2)
    lat = table.lattice
    return (lat.L, lat.d) if lat is not None else (table.volume, 1)


def _block_stats(x, n_blocks=64):
    """Mean with delete-one-block jackknife and batch-means standard errors."""
    x = np.asarray(x)
    n = x.shape[0]
    B = int(min(n_blocks, n))
    edges = np.linspace(0, n, B + 1).astype(int)
    sums = np.array([x[edges[i]:edges[i + 1]].sum() for i in range(B)])
    sizes = np.diff(edges)
    total = sums.sum()
    mean = total / n
    loo = (total - sums) / (n - sizes)
    jk = math.sqrt((B - 1) / B * float(np.sum(np.abs(loo - loo.mean()) ** 2)))
    bm = sums / sizes
    batch = math.sqrt(float(np.sum(np.abs(bm - bm.mean()) ** 2)) / (B - 1) / B)
    return mean, jk, batch


def _as_seed(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(check_rng(rng).integers(2**63))


def _monomials(fields, lattice, specs, n_shifts, rng):
    """Per-draw shift-averaged values of each monomial, shape (n_specs, n_draws)."""
    V, L = lattice.V, lattice.L
    if n_shifts is None or n_shifts >= V:
        pos = idft_full(fields, lattice)  # (n, V), sites in lattice order
        out = []
        for sp in specs:
            prod = np.ones(pos.shape, dtype=complex)
            for x, t in sp.entries:
                # phi_{x+y} for all y: roll the site grid by -x
                grid = pos.reshape((-1,) + (L,) * lattice.d)
                sh = np.roll(grid, shift=tuple(-c for c in x), axis=tuple(range(1, lattice.d + 1)))
                v = sh.reshape(pos.shape)
                prod *= v if t > 0 else np.conj(v)
            out.append(prod.mean(axis=1))
        return np.array(out)
    ys = rng.integers(0, L, size=(n_shifts, lattice.d))
    sites = {}
    for sp in specs:
        for x, _ in sp.entries:
            for y in ys:
                key = tuple(wrap(np.array(x) + y, L).tolist())
                sites.setdefault(key, len(sites))
    xs = np.array(list(sites.keys()))
    vals = idft_at(fields, lattice, xs)  # (n, m)
    out = []
    for sp in specs:
        prod = np.ones((fields.shape[0], n_shifts), dtype=complex)
        for x, t in sp.entries:
            cols = [sites[tuple(wrap(np.array(x) + y, L).tolist())] for y in ys]
            v = vals[:, cols]
            prod *= v if t > 0 else np.conj(v)
        out.append(prod.mean(axis=1))
    return np.array(out)


def _moment_chunk(sampler, lattice, specs, n_shifts, size, rng):
    fields = sampler(size, rng)
    return _monomials(fields, lattice, specs, n_shifts, rng)


def estimate_moments(sampler, specs, n_samples, rng, lattice, n_shifts=16, chunk=1000,
                     workers=1, stream=0):
    """Estimates of several position-space moments from shared draws.

    ``sampler(size, rng)`` returns a batch of fields.  Each draw averages the
    monomial over ``n_shifts`` random translations (all V sites if None).
    """
    specs = [s.wrapped(lattice.L) for s in specs]
    seed = _as_seed(rng)
    fn = partial(_moment_chunk, sampler, lattice, specs, n_shifts)
    parts = run_chunks(fn, n_samples, chunk, seed, stream, workers)
    vals = np.concatenate(parts, axis=1)
    out = []
    for i, sp in enumerate(specs):
        mean, jk, batch = _block_stats(vals[i])
        out.append(EstimateWithError(complex(mean), jk, int(n_samples), "jackknife",
                                     {"batch_se": batch, "label": sp.label, "n_shifts": n_shifts}))
    return out


def estimate_moment(sampler, spec, n_samples, rng, lattice, n_shifts=16, chunk=1000, workers=1):
    """Shift-averaged Monte Carlo estimate of <phi^I> with jackknife error."""
    return estimate_moments(sampler, [spec], n_samples, rng, lattice, n_shifts, chunk, workers)[0]


def sampler_for(measure, table, split, rho=None):
    """Picklable ``sampler(size, rng)`` for one of mu_plus, mu1prime, mu1, mu0."""
    if measure == "mu_plus":
        return partial(_call_normal, table, split)
    fn = {"mu1prime": measures.sample_mu1prime, "mu1": measures.sample_mu1,
          "mu0": measures.sample_mu0}[measure]
    return partial(_call_measure, fn, table, split, rho)


def _call_normal(table, split, size, rng):
    return measures.sample_normal_fluid(table, split, rng, size=size)


def _call_measure(fn, table, split, rho, size, rng):
    return fn(table, split, rho, rng, size=size)


def normal_fluid_covariance_exact(table, split, r):
    """(1/V) sum_+ exp(i 2 pi k.r) / e_k."""
    lat = table.lattice
    r = np.asarray(r, dtype=np.int64)
    n = lat.modes[split.normal]
    ph = np.exp(2j * np.pi * ((n @ r) % lat.L) / lat.L)
    return complex(np.sum(ph / table.e[split.normal]) / lat.V)


def critical_gff_covariance(spec, d, r, tol=1e-7):
    """Continuum covariance: integral of exp(i 2 pi k.r) / (omega - omega_min)."""
    value, _ = torus_integral(spec, d, np.asarray(r, dtype=float), tol)
    return complex(value)


# ---------------------------------------------------------------------------
# Wasserstein upper bounds


@dataclass(frozen=True)
class W2Estimate:
    value: float
    std_error: float
    term_transport: float
    term_transport_se: float
    term_weight: float
    term_weight_se: float
    coupling_cost: float
    coupling_cost_se: float
    analytic_bound: float
    z_ratio: float
    z_ratio_se: float
    n_samples: int
    assumptions_hold: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else None)
                for k, v in self.__dict__.items()}


def _pilot_z(table, split, rho, n_pilot, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(900,)))
    phi = measures.sample_mu1(table, split, rho, rng, size=n_pilot)
    return measures.estimate_z_ratio(measures.weight_g_unnormalized(phi, table, split, rho))


def _gamma_chunk(table, split, rho, z, size, rng):
    V = table.volume
    draw = measures.sample_coupling_gamma(table, split, rho, z, rng, size)
    phi = draw.first
    eps, rho_p, alpha = measures.weight_parts(phi, table, split, rho)
    g = z * measures.weight_g_unnormalized(phi, table, split, rho)
    ok = g > 0
    move = np.zeros(size)
    if ok.any():
        G = measures.change_of_variables_G(phi[ok], table, split, rho,
                                           parts=(eps[ok], rho_p[ok], alpha[ok]))
        move[ok] = measures.field_norm2(phi[ok] - G, V)
    cost = measures.field_norm2(draw.first - draw.second, V)
    return np.stack([g * move, (1 - g) ** 2, cost, draw.diagonal.astype(float)])


def estimate_w2_upper_main(table, split, rho, n_samples, rng, n_pilot=20_000, chunk=500,
                           workers=1, z_ratio=None):
    """Monte Carlo value of 2<g ||Phi - G Phi||^2> + 12 (rho + Delta) V <(1-g)^2>^(1/2), square-rooted.

    Draws come from the gamma coupling, whose first marginal is mu1; the
    direct transport cost <||Phi - Psi||^2>_gamma is reported alongside.
    Norms are ||Phi||^2 = (1/V) sum |Phi_k|^2.
    """
    seed = _as_seed(rng)
    Delta = measures.excess_mass(split, rho)
    V = table.volume
    if z_ratio is None:
        z, z_se = _pilot_z(table, split, rho, n_pilot, seed)
    else:
        z, z_se = float(z_ratio), 0.0
    parts = run_chunks(partial(_gamma_chunk, table, split, rho, z), n_samples, chunk, seed, 1, workers)
    arr = np.concatenate(parts, axis=1)
    n = arr.shape[1]
    m_move, se_move = arr[0].mean(), arr[0].std(ddof=1) / math.sqrt(n)
    m_w, se_w = arr[1].mean(), arr[1].std(ddof=1) / math.sqrt(n)
    m_c, se_c = arr[2].mean(), arr[2].std(ddof=1) / math.sqrt(n)
    t1, t1_se = 2 * m_move, 2 * se_move
    root_w = math.sqrt(m_w)
    t2 = 12 * (rho + Delta) * V * root_w
    t2_se = 12 * (rho + Delta) * V * (se_w / (2 * root_w) if root_w > 0 else 0.0)
    total = t1 + t2
    value = math.sqrt(total)
    se = math.sqrt(t1_se**2 + t2_se**2) / (2 * value) if value > 0 else 0.0
    rep = check_assumptions(table, split, rho)
    L, d = _size(table)
    cost = math.sqrt(m_c)
    cost_se = se_c / (2 * cost) if cost > 0 else 0.0
    return W2Estimate(value, se, t1, t1_se, t2, t2_se, cost, cost_se,
                      w2_bound(rep, L, d), z, z_se, n, rep.ok,
                      {"diagonal_fraction": float(arr[3].mean()), "mean_one_minus_g_sq": float(m_w)})


def _gamma1_chunk(table, split, rho, z1, size, rng):
    draw = measures.sample_coupling_gamma1(table, split, rho, rng, size, z1_ratio=z1)
    return measures.field_norm2(draw.first - draw.second, table.volume)


@dataclass(frozen=True)
class Gamma1Estimate:
    w2_mu1_mu1prime: float
    std_error: float
    bound_mu1_mu1prime: float
    eps_tilde: float
    delta_prime: float
    preconditions_hold: bool
    n_samples: int


def estimate_w2_gamma1(table, split, rho, n_samples, rng, chunk=500, workers=1):
    """Coupling-cost estimate of W2(mu1, mu1') and the bound sqrt(2^5 V rho eps~).

    eps~ = 2 rho V max_0 e_k is the smallest value with e_k <= eps~ V^-1 / (2 rho)
    on the condensate.
    """
    seed = _as_seed(rng)
    z1, _ = measures.estimate_z1_ratio(table, split, rho, np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(901,))))
    dp = measures.delta_prime(table, split, rho)
    eps_t = 2 * dp
    parts = run_chunks(partial(_gamma1_chunk, table, split, rho, z1), n_samples, chunk, seed, 2, workers)
    c = np.concatenate(parts)
    m, se = c.mean(), c.std(ddof=1) / math.sqrt(c.size)
    val = math.sqrt(m)
    return Gamma1Estimate(val, se / (2 * val) if val > 0 else 0.0,
                          math.sqrt(32 * table.volume * rho * eps_t), eps_t, dp,
                          bool(0 < eps_t <= 1 and split.delta <= 0.5), int(c.size))


def w2_mu0_mu1prime_bound(table, split, rho, eps_tilde):
    rep = check_assumptions(table, split, rho)
    return w2_bound_mu1prime(rep, *_size(table), eps_tilde)


# ---------------------------------------------------------------------------
# moment comparison


@dataclass(frozen=True)
class MomentComparison:
    label: str
    order: int
    mu0: complex
    mu0_se: float
    mu1: complex
    mu1_se: float
    difference: float
    combined_se: float
    budget: float
    violation: bool

    def to_row(self):
        return {
            "moment": self.label, "order": self.order,
            "mu0_re": self.mu0.real, "mu0_im": self.mu0.imag, "mu0_se": self.mu0_se,
            "mu1_re": self.mu1.real, "mu1_im": self.mu1.imag, "mu1_se": self.mu1_se,
            "difference": self.difference, "combined_se": self.combined_se,
            "budget": self.budget, "violation": self.violation,
        }


def compare_mu0_mu1_moments(table, split, rho, specs, n_samples, rng, n_shifts=16, chunk=500,
                            workers=1):
    """Differences of position moments between mu0 and mu1 against their analytic budgets."""
    seed = _as_seed(rng)
    lat = table.lattice
    est0 = estimate_moments(sampler_for("mu0", table, split, rho), specs, n_samples, seed, lat,
                            n_shifts, chunk, workers, stream=10)
    est1 = estimate_moments(sampler_for("mu1", table, split, rho), specs, n_samples, seed, lat,
                            n_shifts, chunk, workers, stream=11)
    rep = check_assumptions(table, split, rho)
    w2 = w2_bound(rep, lat.L, lat.d)
    rows = []
    for sp, a, b in zip(specs, est0, est1):
        diff = abs(a.value - b.value)
        se = math.hypot(a.std_error, b.std_error)
        budget = moment_error_bound(w2, lat.L, lat.d, sp.n, rho=rho, M0=split.V0)
        rows.append(MomentComparison(sp.label, sp.n, a.value, a.std_error, b.value, b.std_error,
                                     diff, se, budget, bool(diff - 3 * se > budget)))
    return rows


# ---------------------------------------------------------------------------
# sampler-vs-oracle agreement on small systems


def small_system_split(system):
    """Threshold split of a small system with the smallest gap ratio that is
    supercritical; None if no cut leaves rho above rho_c."""
    from .dispersion import energy_table_from_values
    from .split import make_split

    table = energy_table_from_values(system.energies, system.V)
    order = np.argsort(table.e, kind="stable")
    best = None
    for j in range(1, table.n_modes):
        if table.e[order[j]] == table.e[order[j - 1]]:
            continue
        sp = make_split(table, order[:j], {"kind": "small_system"})
        if sp.rho_c < system.rho and (best is None or sp.delta < best.delta):
            best = sp
    return table, best


@dataclass(frozen=True)
class OracleCheck:
    exponents: tuple
    measure: str
    estimate: float
    std_error: float
    oracle: float
    z_score: float
    passed: bool

    def to_row(self):
        return {"measure": self.measure, "exponents": " ".join(map(str, self.exponents)),
                "estimate": self.estimate, "std_error": self.std_error, "oracle": self.oracle,
                "z_score": self.z_score, "passed": self.passed}


def check_against_oracle(system, measure, n_samples, rng, chunk=20_000, workers=1, stream=20):
    """First and second mass moments of a sampler versus quadrature.

    Returns None when the system admits no supercritical split.
    """
    from .oracle import oracle_field_moment, second_order_exponents

    table, sp = small_system_split(system)
    if sp is None:
        return None
    seed = _as_seed(rng)
    sampler = sampler_for(measure, table, sp, system.rho)
    parts = run_chunks(partial(_masses_chunk, sampler), n_samples, chunk, seed, stream, workers)
    s = np.concatenate(parts, axis=0)
    rows = []
    for m in second_order_exponents(system.n):
        if measure == "mu_plus" and any(m[k] for k in sp.condensate):
            continue
        x = np.prod(s ** np.array(m), axis=1)
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(x.size))
        ref = oracle_field_moment(system, sp.condensate.tolist(), measure, m)
        exact = abs(mean - ref) <= 1e-9 * max(1.0, abs(ref))  # deterministic masses
        if exact:
            z = 0.0
        else:
            z = (mean - ref) / se if se > 0 else math.inf
        rows.append(OracleCheck(tuple(m), measure, mean, se, ref, float(z), bool(abs(z) <= 3)))
    return rows


def _masses_chunk(sampler, size, rng):
    return measures.abs2(sampler(size, rng))
