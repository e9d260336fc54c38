"""Exact samplers for the normal fluid, the factorised measures and the
spherical measure, with the weight functions and couplings relating them.

Fields are complex arrays whose trailing axis runs over all modes of the
energy table; samplers return shape ``(size, n_modes)`` (or ``(n_modes,)``
when ``size`` is None).  Norm convention: ``N[Phi] = (1/V) sum |Phi_k|^2``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .streams import check_rng


class SupercriticalityError(ValueError):
    """The density does not exceed the critical density of the split."""


class GapViolationError(ValueError):
    """The condensate energy ratio reached the normal-fluid gap."""


class AcceptanceError(RuntimeError):
    """Rejection sampling fell below its acceptance floor."""


class InvariantViolation(RuntimeError):
    """A bound guaranteed by the construction failed on a draw."""


ACCEPTANCE_FLOOR = 1e-6


def _squeeze(x, size):
    return x[0] if size is None else x


def _nsize(size):
    return 1 if size is None else int(size)


def excess_mass(split, rho):
    Delta = rho - split.rho_c
    if not Delta > 0:
        raise SupercriticalityError(f"rho={rho} does not exceed rho_c={split.rho_c}")
    return Delta


# ---------------------------------------------------------------------------
# functionals


def functionals(phi, table, split):
    """Norm and energy functionals of field(s) ``phi``.

    Returns a dict of arrays with keys N, N0, N_plus, rho0, rho_plus, E0, E_plus.
    """
    V = table.volume
    s = abs2(np.asarray(phi))
    s0 = s[..., split.condensate]
    N0 = s0.sum(axis=-1) / V
    N = s.sum(axis=-1) / V
    Np = N - N0
    E = s @ table.e / V
    E0 = s0 @ table.e[split.condensate] / V
    return {
        "N": N,
        "N0": N0,
        "N_plus": Np,
        "rho0": N0 / V,
        "rho_plus": Np / V,
        "E0": E0,
        "E_plus": E - E0,
    }


def field_norm2(phi, volume):
    """||Phi||^2 = (1/V) sum_k |Phi_k|^2 along the last axis."""
    return np.sum(abs2(phi), axis=-1) / volume


# ---------------------------------------------------------------------------
# basic samplers


def sample_normal_fluid(table, split, rng, size=None):
    """Gaussian normal fluid: Re and Im of Phi_k independent N(0, V/(2 e_k)).

    Condensate entries are zero.
    """
    rng = check_rng(rng)
    n = _nsize(size)
    sd = np.zeros(table.n_modes)
    sd[split.normal] = np.sqrt(table.volume / (2.0 * table.e[split.normal]))
    # (n, V, 2) float pairs viewed as complex, scaled in place
    out = rng.standard_normal((n, table.n_modes, 2)).view(complex)[..., 0]
    out *= sd
    return _squeeze(out, size)


def abs2(x):
    return x.real**2 + x.imag**2


def sample_uniform_sphere(n, radius, rng, size=None):
    """Uniform point on the sphere of complex C^n with Euclidean norm ``radius``."""
    if n < 1:
        raise ValueError("sphere dimension must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = check_rng(rng)
    m = _nsize(size)
    z = rng.standard_normal((m, n, 2))
    z = z[..., 0] + 1j * z[..., 1]
    norm = np.linalg.norm(z, axis=-1)
    bad = norm == 0.0
    while bad.any():  # practically never
        w = rng.standard_normal((int(bad.sum()), n, 2))
        z[bad] = w[..., 0] + 1j * w[..., 1]
        norm[bad] = np.linalg.norm(z[bad], axis=-1)
        bad = norm == 0.0
    out = z * (radius / norm)[:, None]
    return _squeeze(out, size)


def _condensate_sphere(table, split, Delta, rng, n):
    return sample_uniform_sphere(split.V0, table.volume * math.sqrt(Delta), rng, size=n)


def sample_mu1prime(table, split, rho, rng, size=None):
    """Normal fluid times a uniform condensate on the sphere sum_0 |Phi_k|^2 = Delta V^2."""
    rng = check_rng(rng)
    Delta = excess_mass(split, rho)
    n = _nsize(size)
    out = sample_normal_fluid(table, split, rng, size=n)
    out[:, split.condensate] = _condensate_sphere(table, split, Delta, rng, n)
    return _squeeze(out, size)


# ---------------------------------------------------------------------------
# condensate weight


def log_condensate_weight(E0, table, split, Delta, check=True):
    """log W(E0) for the condensate factor of mu1.

    W(E0) = exp(-E0 (1 + rho_c/Delta)) prod_+ (1 - E0 / (V Delta e_k))^-1,
    accumulated as a log-sum over the normal modes.
    """
    E0 = np.asarray(E0, dtype=float)
    V = table.volume
    E0max = split.a * V * Delta
    if check and (np.any(E0 < 0) or np.any(E0 > E0max * (1 + 1e-9) + 1e-300)):
        raise ValueError(f"E0 outside [0, {E0max}]")
    eps_t = E0 / (V * Delta)  # equals E0/N0 on the constraint surface
    e_plus = table.e[split.normal]
    flat = eps_t.reshape(-1)
    acc = np.empty_like(flat)
    step = max(1, (1 << 22) // max(1, e_plus.size))
    for i in range(0, flat.size, step):
        x = flat[i:i + step, None] / e_plus[None, :]
        acc[i:i + step] = -np.log1p(-x).sum(axis=1)
    return (-E0 * (1.0 + split.rho_c / Delta)).reshape(E0.shape) + acc.reshape(E0.shape)


def condensate_weight_W(E0, table, split, Delta):
    """Condensate weight W(E0) of mu1 relative to the uniform-sphere measure."""
    return np.exp(log_condensate_weight(E0, table, split, Delta))


def _golden_max(f, lo, hi, iters=80):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return max(fc, fd)


def log_weight_sup(table, split, Delta, n_grid=10_000):
    """Supremum of log W over [0, E0max]: dense grid plus golden-section refinement."""
    E0max = split.a * table.volume * Delta
    if E0max == 0.0:
        return 0.0
    grid = np.linspace(0.0, E0max, n_grid)
    vals = log_condensate_weight(grid, table, split, Delta)
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    f = lambda x: float(log_condensate_weight(np.array([x]), table, split, Delta)[0])
    best = max(float(vals[i]), _golden_max(f, lo, hi), f(0.0), f(E0max))
    # small cushion against rounding; exceedances are still checked per draw
    return best + 1e-12 * max(1.0, abs(best))


@dataclass
class SamplerStats:
    proposed: int = 0
    accepted: int = 0
    log_sup: float = 0.0

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else float("nan")

    def merge(self, other):
        self.proposed += other.proposed
        self.accepted += other.accepted
        self.log_sup = max(self.log_sup, other.log_sup)
        return self


def _rejection_loop(propose, log_accept, n, rng, stats, max_rounds=10_000):
    """Collect ``n`` accepted proposals; ``log_accept`` returns log probabilities <= 0."""
    kept, have, rate = [], 0, 1.0
    for _ in range(max_rounds):
        need = n - have
        if need <= 0:
            break
        m = int(min(max(need / max(rate, 1e-3) * 1.05 + 16, need), 1 << 16))
        x = propose(m)
        la = log_accept(x)
        if np.any(la > 1e-9):
            raise InvariantViolation(f"acceptance probability above one (log = {la.max()})")
        acc = np.log(rng.random(m)) < la
        stats.proposed += m
        stats.accepted += int(acc.sum())
        rate = max(stats.acceptance_rate, 1e-12)
        kept.append(x[acc])
        have += int(acc.sum())
        if stats.proposed >= 1_000_000 and stats.acceptance_rate < ACCEPTANCE_FLOOR:
            raise AcceptanceError(
                f"acceptance {stats.acceptance_rate:.3g} below floor after {stats.proposed} proposals"
            )
    else:
        raise AcceptanceError("rejection loop hit its round cap")
    out = np.concatenate(kept, axis=0)
    return out[:n]


def sample_mu1_condensate(table, split, Delta, rng, n, stats=None, log_sup=None):
    """Condensate part of mu1: uniform sphere reweighted by W(E0)."""
    stats = SamplerStats() if stats is None else stats
    if split.a == 0.0:
        return _condensate_sphere(table, split, Delta, rng, n)
    if log_sup is None:
        log_sup = log_weight_sup(table, split, Delta)
    stats.log_sup = log_sup
    e0 = table.e[split.condensate]
    V = table.volume

    def propose(m):
        return _condensate_sphere(table, split, Delta, rng, m)

    def log_acc(x):
        E0 = (abs2(x) @ e0) / V
        return log_condensate_weight(E0, table, split, Delta) - log_sup

    return _rejection_loop(propose, log_acc, n, rng, stats)


def sample_mu1(table, split, rho, rng, size=None, stats=None):
    """Exact sampler for mu1: normal fluid times the W-weighted condensate sphere."""
    rng = check_rng(rng)
    Delta = excess_mass(split, rho)
    if not split.delta < 1:
        raise GapViolationError("mu1 needs delta < 1")
    n = _nsize(size)
    cond = sample_mu1_condensate(table, split, Delta, rng, n, stats)
    out = sample_normal_fluid(table, split, rng, size=n)
    out[:, split.condensate] = cond
    return _squeeze(out, size)


# ---------------------------------------------------------------------------
# weight g and change of variables G


def _eps_tilde(phi, table, split):
    s0 = abs2(phi[..., split.condensate])
    N0 = s0.sum(axis=-1)
    E0 = s0 @ table.e[split.condensate]
    with np.errstate(invalid="ignore", divide="ignore"):
        eps = np.where(N0 > 0, E0 / np.where(N0 > 0, N0, 1.0), 0.0)  # 0 when N0 = 0
    return eps


def _normal_mask(table, split):
    m = np.zeros(table.n_modes, dtype=bool)
    m[split.normal] = True
    return m


def weight_parts(phi, table, split, rho):
    """Return ``(eps_tilde, rho_prime, alpha_prime)`` for field(s) ``phi``."""
    phi = np.asarray(phi)
    Delta = excess_mass(split, rho)
    eps = _eps_tilde(phi, table, split)
    if np.any(eps >= split.b):
        raise GapViolationError("eps_tilde reached the normal-fluid gap b")
    s = abs2(phi)
    mask = _normal_mask(table, split)
    if split.a == 0.0:
        # eps~ vanishes identically
        rho_p = s @ mask.astype(float) / table.volume**2
    else:
        e = np.where(mask, table.e, 1.0)
        eps_b = np.asarray(eps)[..., None]
        ratio = np.where(mask, e / (e - eps_b), 0.0)
        rho_p = np.sum(s * ratio, axis=-1) / table.volume**2
    alpha = (rho_p - split.rho_c) / Delta
    return eps, rho_p, alpha


def weight_g_unnormalized(phi, table, split, rho):
    """g~ = 1{rho' < rho} (1 - alpha')^(V0 - 1)."""
    _, rho_p, alpha = weight_parts(phi, table, split, rho)
    ok = rho_p < rho
    base = np.where(ok, 1.0 - alpha, 1.0)
    return np.where(ok, base ** (split.V0 - 1), 0.0)


def g_max(split, rho):
    """Upper bound (rho/Delta)^(V0-1) of g~ (uses alpha' >= -rho_c/Delta)."""
    return (rho / excess_mass(split, rho)) ** (split.V0 - 1)


def change_of_variables_G(phi, table, split, rho, parts=None):
    """Rescale normal modes by (1 - eps~/e_k)^(-1/2) and condensate by (1 - alpha')^(1/2)."""
    phi = np.asarray(phi)
    eps, _, alpha = weight_parts(phi, table, split, rho) if parts is None else parts
    if np.any(alpha >= 1):
        raise ValueError("G needs alpha' < 1")
    out = np.array(phi, dtype=complex, copy=True)
    if split.a > 0.0:
        mask = _normal_mask(table, split)
        e = np.where(mask, table.e, 1.0)
        scale = np.where(mask, 1.0 / np.sqrt(1.0 - np.asarray(eps)[..., None] / e), 1.0)
        out *= scale
    out[..., split.condensate] *= np.sqrt(1.0 - np.asarray(alpha))[..., None]
    return out


def sample_mu0(table, split, rho, rng, size=None, stats=None):
    """Exact sampler for the spherical measure.

    Draw Phi from mu1, accept with probability g~ / (rho/Delta)^(V0-1) and
    return G[Phi].
    """
    rng = check_rng(rng)
    n = _nsize(size)
    stats = SamplerStats() if stats is None else stats
    inner = SamplerStats()
    log_gmax = math.log(g_max(split, rho))
    Delta = excess_mass(split, rho)
    log_sup = log_weight_sup(table, split, Delta) if split.a > 0 else None

    def propose(m):
        out = sample_normal_fluid(table, split, rng, size=m)
        out[:, split.condensate] = sample_mu1_condensate(table, split, Delta, rng, m, inner, log_sup)
        return out

    def log_acc(x):
        with np.errstate(divide="ignore"):
            return np.log(weight_g_unnormalized(x, table, split, rho)) - log_gmax

    phi = _rejection_loop(propose, log_acc, n, rng, stats)
    out = change_of_variables_G(phi, table, split, rho)
    return _squeeze(out, size)


def estimate_z_ratio(gtilde):
    """Z1/Z0 = 1/<g~>_mu1 with a delta-method standard error."""
    g = np.asarray(gtilde, dtype=float).ravel()
    if g.size < 1000:
        raise ValueError("need at least 1000 draws to estimate the normalisation ratio")
    m = g.mean()
    if m == 0:
        raise ValueError("all weights are zero")
    se_m = g.std(ddof=1) / math.sqrt(g.size)
    return 1.0 / m, se_m / m**2


# ---------------------------------------------------------------------------
# couplings


@dataclass
class CouplingDraw:
    """Batch of pairs; ``diagonal[i]`` marks the deterministic branch."""

    first: np.ndarray
    second: np.ndarray
    diagonal: np.ndarray
    stats: dict


def sample_coupling_gamma(table, split, rho, z_ratio, rng, size):
    """Diagonal-concentration coupling of mu1 (first) and mu0 (second).

    With probability min(1, g) the pair is (Phi, G[Phi]); otherwise the
    second component is G[Psi] with Psi drawn from mu1 tilted by (g - 1)+.
    The tilt's supremum is z (rho/Delta)^(V0-1) - 1, exact because g~ is
    bounded by (rho/Delta)^(V0-1).
    """
    rng = check_rng(rng)
    n = int(size)
    phi = sample_mu1(table, split, rho, rng, size=n)
    parts = weight_parts(phi, table, split, rho)
    g = z_ratio * weight_g_unnormalized(phi, table, split, rho)
    diag = rng.random(n) < np.minimum(1.0, g)
    second = np.empty_like(phi)
    if diag.any():
        sub = tuple(p[diag] for p in parts)
        second[diag] = change_of_variables_G(phi[diag], table, split, rho, parts=sub)
    m = int((~diag).sum())
    tstats = SamplerStats()
    if m:
        sup = z_ratio * g_max(split, rho) - 1.0
        if not sup > 0:
            raise AcceptanceError("no excess weight to place off the diagonal (z_ratio too small)")
        log_sup = math.log(sup)

        def propose(k):
            return sample_mu1(table, split, rho, rng, size=k)

        def log_acc(x):
            ex = z_ratio * weight_g_unnormalized(x, table, split, rho) - 1.0
            with np.errstate(divide="ignore"):
                return np.log(np.maximum(ex, 0.0)) - log_sup

        psi = _rejection_loop(propose, log_acc, m, rng, tstats)
        second[~diag] = change_of_variables_G(psi, table, split, rho)
    stats = {"n": n, "diagonal": int(diag.sum()), "tilt_acceptance": tstats.acceptance_rate}
    return CouplingDraw(phi, second, diag, stats)


def weight_g2(phi, table, split, rho):
    """Density g2 = W(E0) of mu1 relative to mu1' (up to normalisation)."""
    Delta = excess_mass(split, rho)
    E0 = functionals(phi, table, split)["E0"]
    return condensate_weight_W(E0, table, split, Delta)


def delta_prime(table, split, rho):
    """rho V max_0 e_k."""
    return rho * table.volume * split.a


def estimate_z1_ratio(table, split, rho, rng, n=20_000):
    """Z1/Z1' = <g2>_mu1' with its standard error."""
    phi = sample_mu1prime(table, split, rho, rng, size=n)
    g2 = weight_g2(phi, table, split, rho)
    return float(g2.mean()), float(g2.std(ddof=1) / math.sqrt(n))


def sample_coupling_gamma1(table, split, rho, rng, size, z1_ratio=None):
    """Diagonal-concentration coupling of mu1' (first) and mu1 (second).

    g1 = g2 / <g2>_mu1'; the diagonal pair is (Phi, Phi).  When
    delta' <= 1/2 every draw is checked against |1 - g1| <= 4 e^2 delta'.
    """
    rng = check_rng(rng)
    n = int(size)
    Delta = excess_mass(split, rho)
    if z1_ratio is None:
        z1_ratio, _ = estimate_z1_ratio(table, split, rho, rng)
    dp = delta_prime(table, split, rho)
    first = sample_mu1prime(table, split, rho, rng, size=n)
    g1 = weight_g2(first, table, split, rho) / z1_ratio
    if dp <= 0.5 and np.any(np.abs(1 - g1) > 4 * math.e**2 * dp * (1 + 1e-12)):
        raise InvariantViolation("|1 - g1| exceeded 4 e^2 delta'")
    diag = rng.random(n) < np.minimum(1.0, g1)
    second = first.copy()
    m = int((~diag).sum())
    tstats = SamplerStats()
    if m:
        log_sup = log_weight_sup(table, split, Delta)
        sup = math.exp(log_sup) / z1_ratio - 1.0
        if not sup > 0:
            raise AcceptanceError("no excess weight to place off the diagonal")

        def propose(k):
            return sample_mu1prime(table, split, rho, rng, size=k)

        def log_acc(x):
            ex = weight_g2(x, table, split, rho) / z1_ratio - 1.0
            with np.errstate(divide="ignore"):
                return np.log(np.maximum(ex, 0.0)) - math.log(sup)

        second[~diag] = _rejection_loop(propose, log_acc, m, rng, tstats)
    stats = {"n": n, "diagonal": int(diag.sum()), "delta_prime": dp, "z1_ratio": z1_ratio,
             "tilt_acceptance": tstats.acceptance_rate}
    return CouplingDraw(first, second, diag, stats)
