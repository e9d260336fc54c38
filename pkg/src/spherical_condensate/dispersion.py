"""Dispersion relations, lattice energy tables and continuum integrals."""
import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .lattice import LatticeSpec, side_range, wrap


class DegenerateMinimumError(ValueError):
    """A minimum of the dispersion has a Hessian that is not positive definite."""


class NonSmoothDispersionError(ValueError):
    """Operation needs a twice differentiable dispersion relation."""


class ConvergenceError(RuntimeError):
    """Numerical refinement did not reach the requested tolerance."""

    def __init__(self, msg, best=None, error=None):
        super().__init__(msg)
        self.best = best
        self.error = error


def _sin2(x):
    return np.sin(np.pi * x) ** 2


def _as_k(k, d=None):
    k = np.asarray(k, dtype=float)
    if d is not None and k.shape[-1] != d:
        raise ValueError(f"expected wave vectors of dimension {d}, got {k.shape[-1]}")
    return k


class Dispersion:
    """Base class; subclasses implement ``__call__(k)`` on arrays (..., d)."""

    smooth = True
    analytic = True

    def __call__(self, k):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class NearestNeighbour(Dispersion):
    """omega(k) = a + b sum_i sin^2(pi k_i)."""

    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("NearestNeighbour needs b > 0")

    def __call__(self, k):
        k = _as_k(k)
        return self.a + self.b * _sin2(k).sum(axis=-1)

    def to_dict(self):
        return {"kind": "nearest_neighbour", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Acoustic(Dispersion):
    """omega(k) = (sum_i sin^2(pi k_i))^(1/2); not C^2 at k = 0."""

    smooth = False

    def __call__(self, k):
        return np.sqrt(_sin2(_as_k(k)).sum(axis=-1))

    def to_dict(self):
        return {"kind": "acoustic"}


@dataclass(frozen=True)
class DoubledSine(Dispersion):
    """omega(k) = sum_i sin^2(2 pi k_i), minima at every k in {0, 1/2}^d."""

    def __call__(self, k):
        return _sin2(2.0 * _as_k(k)).sum(axis=-1)

    def to_dict(self):
        return {"kind": "doubled_sine"}


@dataclass(frozen=True)
class Shifted(Dispersion):
    """Base dispersion evaluated at ``k - zeta``."""

    zeta: tuple
    base: Dispersion = NearestNeighbour()

    def __post_init__(self):
        object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))
        if isinstance(self.base, Shifted) or not isinstance(self.base, (NearestNeighbour, DoubledSine)):
            raise ValueError("Shifted base must be NearestNeighbour or DoubledSine")

    def __call__(self, k):
        k = _as_k(k, len(self.zeta))
        return self.base(k - np.asarray(self.zeta))

    def to_dict(self):
        return {"kind": "shifted", "zeta": list(self.zeta), "base": self.base.to_dict()}


@dataclass(frozen=True)
class ProductShifted(Dispersion):
    """omega(k) = s(k) s(k - zeta) with s(k) = sum_i sin^2(pi k_i)."""

    zeta: tuple

    def __post_init__(self):
        object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))

    def __call__(self, k):
        k = _as_k(k, len(self.zeta))
        return _sin2(k).sum(axis=-1) * _sin2(k - np.asarray(self.zeta)).sum(axis=-1)

    def to_dict(self):
        return {"kind": "product_shifted", "zeta": list(self.zeta)}


@dataclass(frozen=True)
class Anisotropic(Dispersion):
    """omega(k) = sum_l b_l sin^2(pi (k - zeta).M_l) with integer vectors M_l."""

    pairs: tuple
    zeta: tuple

    def __post_init__(self):
        pairs = tuple((float(b), tuple(int(m) for m in M)) for b, M in self.pairs)
        if not pairs:
            raise ValueError("Anisotropic needs at least one (b, M) pair")
        for b, M in pairs:
            if not b > 0:
                raise ValueError("Anisotropic weights must be positive")
            if len(M) != len(self.zeta):
                raise ValueError("vector M and zeta dimensions differ")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))

    def __call__(self, k):
        q = _as_k(k, len(self.zeta)) - np.asarray(self.zeta)
        out = 0.0
        for b, M in self.pairs:
            out = out + b * _sin2(q @ np.asarray(M, dtype=float))
        return out

    def to_dict(self):
        return {
            "kind": "anisotropic",
            "pairs": [[b, list(M)] for b, M in self.pairs],
            "zeta": list(self.zeta),
        }


@dataclass(frozen=True, eq=False)
class CustomTable(Dispersion):
    """Per-mode values on one fixed lattice."""

    lattice: LatticeSpec
    values: np.ndarray
    analytic = False
    smooth = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.shape != (self.lattice.V,):
            raise ValueError(f"need {self.lattice.V} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("custom dispersion values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, k):
        k = _as_k(k, self.lattice.d)
        n = k * self.lattice.L
        ni = np.rint(n)
        if not np.allclose(n, ni, atol=1e-9):
            raise ValueError("CustomTable can only be evaluated on its own lattice")
        return self.values[self.lattice.index_of(ni.astype(np.int64))]

    def to_dict(self):
        return {"kind": "custom", "d": self.lattice.d, "L": self.lattice.L}

    @classmethod
    def read_csv(cls, path):
        """Load a table with columns n_1..n_d, omega."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = len(header) - 1
        if header[-1] != "omega" or header[:-1] != [f"n_{i + 1}" for i in range(d)]:
            raise ValueError(f"unexpected header {header}")
        n = np.array([[int(c) for c in r[:-1]] for r in body], dtype=np.int64)
        omega = np.array([float(r[-1]) for r in body])
        L = round(len(body) ** (1.0 / d))
        if L**d != len(body):
            raise ValueError("row count is not a perfect d-th power")
        lat = LatticeSpec(d, L)
        idx = lat.index_of(n)
        if len(set(idx.tolist())) != lat.V:
            raise ValueError("rows do not cover every mode exactly once")
        values = np.empty(lat.V)
        values[idx] = omega
        return cls(lat, values)

    def write_csv(self, path):
        lat = self.lattice
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"n_{i + 1}" for i in range(lat.d)] + ["omega"])
            for n, v in zip(lat.modes, self.values):
                w.writerow([int(c) for c in n] + [repr(float(v))])


def dispersion_from_dict(cfg):
    """Build a dispersion from its JSON form (see ``to_dict``)."""
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind == "nearest_neighbour":
        return NearestNeighbour(**cfg)
    if kind == "acoustic":
        return Acoustic()
    if kind == "doubled_sine":
        return DoubledSine()
    if kind == "shifted":
        base = dispersion_from_dict(cfg.pop("base", {"kind": "nearest_neighbour"}))
        return Shifted(zeta=tuple(cfg.pop("zeta")), base=base, **cfg)
    if kind == "product_shifted":
        return ProductShifted(zeta=tuple(cfg.pop("zeta")))
    if kind == "anisotropic":
        return Anisotropic(pairs=tuple((b, tuple(M)) for b, M in cfg.pop("pairs")), zeta=tuple(cfg.pop("zeta")))
    if kind == "custom":
        return CustomTable.read_csv(cfg.pop("path"))
    raise ValueError(f"unknown dispersion kind {kind!r}")


def eval_dispersion(spec, k):
    """Value of omega at ``k`` (array (..., d) accepted)."""
    return spec(k)


@dataclass(frozen=True, eq=False)
class EnergyTable:
    """Mode energies for one finite mode set.

    ``e`` holds excess energies ``omega - omega0``; ``volume`` is ``V``.  Tables
    built from a lattice carry it in ``lattice``; small abstract systems have
    ``lattice=None``.
    """

    omega: np.ndarray
    omega0: float
    e: np.ndarray
    volume: float
    lattice: LatticeSpec = None
    omega_min: float = None
    spec: Dispersion = field(default=None, repr=False)

    @property
    def n_modes(self):
        return self.e.shape[0]

    @property
    def minimizers(self):
        return np.flatnonzero(self.e == 0.0)


# values within this relative distance of the lattice minimum count as ties
TIE_RTOL = 64 * np.finfo(float).eps


def _table_from_omega(omega, volume, lattice=None, spec=None, omega_min=None):
    omega = np.asarray(omega, dtype=float)
    omega0 = float(omega.min())
    e = omega - omega0
    scale = max(1.0, float(np.abs(omega).max()))
    e[e <= TIE_RTOL * scale] = 0.0
    omega.setflags(write=False)
    e.setflags(write=False)
    return EnergyTable(omega, omega0, e, volume, lattice, omega_min, spec)


def energy_table(spec, lattice):
    """Evaluate ``spec`` on every mode of ``lattice``.

    Values tied with the lattice minimum up to rounding are snapped so that
    their excess energy is exactly zero.
    """
    if isinstance(spec, CustomTable):
        if spec.lattice != lattice:
            raise ValueError("CustomTable belongs to a different lattice")
        omega = np.array(spec.values)
    else:
        omega = spec(lattice.k)
    return _table_from_omega(omega, lattice.V, lattice, spec, _known_minimum(spec))


def energy_table_from_values(energies, volume):
    """Table for an abstract mode set (no geometry), e.g. oracle systems."""
    if not volume > 0:
        raise ValueError("volume must be positive")
    return _table_from_omega(np.array(energies, dtype=float), float(volume))


def _known_minimum(spec):
    if isinstance(spec, NearestNeighbour):
        return spec.a
    if isinstance(spec, (DoubledSine, Acoustic, ProductShifted, Anisotropic)):
        return 0.0
    if isinstance(spec, Shifted):
        return _known_minimum(spec.base)
    return None


# ---------------------------------------------------------------------------
# continuum minima


@dataclass(frozen=True)
class Minimum:
    k0: np.ndarray
    value: float
    hessian: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class MinimaReport:
    minima: tuple
    lam_minus: float
    lam_plus: float
    omega_min: float

    @property
    def points(self):
        return np.array([m.k0 for m in self.minima])


def torus_delta(a, b):
    """Componentwise difference a - b folded into [-1/2, 1/2)."""
    return (np.asarray(a) - np.asarray(b) + 0.5) % 1.0 - 0.5


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_hessian(f, x, h=1e-4):
    """Central finite-difference Hessian."""
    d = x.size
    H = np.empty((d, d))
    f0 = f(x)
    eye = np.eye(d) * h
    for i in range(d):
        H[i, i] = (f(x + eye[i]) - 2 * f0 + f(x - eye[i])) / h**2
        for j in range(i + 1, d):
            H[i, j] = H[j, i] = (
                f(x + eye[i] + eye[j]) - f(x + eye[i] - eye[j])
                - f(x - eye[i] + eye[j]) + f(x - eye[i] - eye[j])
            ) / (4 * h**2)
    return H


def _discrete_local_minima(values, L, d):
    grid = values.reshape((L,) * d)
    is_min = np.ones(grid.shape, dtype=bool)
    for shift in np.ndindex(*(3,) * d):
        s = tuple(c - 1 for c in shift)
        if not any(s):
            continue
        is_min &= grid <= np.roll(grid, s, axis=tuple(range(d)))
    return np.flatnonzero(is_min.ravel())


def _check_quadratic(f, x, H, fx, h=1e-2):
    # a tiny FD Hessian can also come from a flatter-than-quadratic minimum;
    # the curvature seen at a coarser step must then disagree with it
    ev, U = np.linalg.eigh(H)
    for lam, u in zip(ev, U.T):
        c = (f(x + h * u) + f(x - h * u) - 2 * fx) / h**2
        if not 0.5 < c / lam < 2.0:
            raise DegenerateMinimumError(
                f"minimum at {x} is not quadratic (curvature {c:.3g} at step {h} vs Hessian {lam:.3g})"
            )


def detect_minima(spec, lattice, max_starts=4096):
    """Locate the global minima of a smooth dispersion on the torus.

    Local descent starts from every discrete local minimum of the lattice
    values; each endpoint is polished with Newton steps on finite-difference
    derivatives.  Hessians use central differences with step 1e-4.
    """
    if isinstance(spec, CustomTable) or not spec.analytic:
        raise NonSmoothDispersionError("minima detection needs an analytic dispersion")
    if not spec.smooth:
        raise NonSmoothDispersionError(f"{type(spec).__name__} is not twice differentiable at its minimum")
    d = lattice.d
    values = spec(lattice.k)
    starts = _discrete_local_minima(values, lattice.L, d)
    starts = starts[np.argsort(values[starts], kind="stable")][:max_starts]

    def f(x):
        return float(spec(x))

    found = []
    for idx in starts:
        x0 = lattice.k[idx]
        res = optimize.minimize(f, x0, method="BFGS", options={"gtol": 1e-12})
        x = res.x
        for _ in range(8):
            g = fd_gradient(f, x)
            H = fd_hessian(f, x)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)) or np.abs(step).max() > 1e-2:
                break
            x = x - step
            if np.abs(step).max() < 1e-13:
                break
        x = torus_delta(x, 0.0)
        found.append((f(x), x))

    if not found:
        raise RuntimeError("no discrete local minimum found")
    vmin = min(v for v, _ in found)
    atol = 1e-10 * max(1.0, abs(vmin))
    minima = []
    for v, x in sorted(found, key=lambda t: t[0]):
        if v > vmin + atol:
            continue
        if any(np.linalg.norm(torus_delta(x, m.k0)) < 1e-6 for m in minima):
            continue
        H = fd_hessian(f, x)
        H = 0.5 * (H + H.T)
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= 1e-6 * max(1.0, abs(ev[-1])):
            raise DegenerateMinimumError(f"Hessian at {x} has eigenvalues {ev}")
        _check_quadratic(f, x, H, v)
        minima.append(Minimum(x, v, H, ev))
    # deterministic order: lexicographic in k0
    minima.sort(key=lambda m: tuple(np.round(m.k0, 9)))
    lam_minus = min(m.eigenvalues[0] for m in minima)
    lam_plus = max(m.eigenvalues[-1] for m in minima)
    return MinimaReport(tuple(minima), float(lam_minus), float(lam_plus), float(vmin))


# ---------------------------------------------------------------------------
# torus integrals with one inverse-quadratic singularity per minimum

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _face_integral(H, fixed_axis, fixed_val, lo, hi, panels=4):
    """Integral of 1 / (q.Hq/2) over a (d-1)-box face with q[fixed_axis] = fixed_val."""
    d = H.shape[0]
    free = [i for i in range(d) if i != fixed_axis]
    nodes, weights = [], []
    for i in free:
        edges = np.linspace(lo[i], hi[i], panels + 1)
        a, b = edges[:-1, None], edges[1:, None]
        x = (0.5 * (b - a) * _GL_X + 0.5 * (a + b)).ravel()
        w = (0.5 * (b - a) * _GL_W).ravel()
        nodes.append(x)
        weights.append(w)
    mesh = np.meshgrid(*nodes, indexing="ij")
    wmesh = np.ones_like(mesh[0]) if mesh else np.ones(())
    for i, w in enumerate(np.meshgrid(*weights, indexing="ij")):
        wmesh = wmesh * w
    q = np.empty(mesh[0].shape + (d,))
    q[..., fixed_axis] = fixed_val
    for j, i in enumerate(free):
        q[..., i] = mesh[j]
    quad = 0.5 * np.einsum("...i,ij,...j->...", q, H, q)
    return float(np.sum(wmesh / quad))


def quadratic_box_integral(H, lo, hi):
    """Integral of 1 / (q.Hq/2) over the box [lo, hi] containing the origin.

    The box is cut into pyramids with apex at the origin, one per face; the
    degree -2 homogeneity reduces each to a face integral.  Needs d >= 3.
    """
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    if d < 3:
        raise ValueError("inverse-quadratic singularity is integrable only for d >= 3")
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    total = 0.0
    for i in range(d):
        for val in (lo[i], hi[i]):
            h = abs(val)
            if h == 0.0:
                continue
            total += h / (d - 2) * _face_integral(H, i, val, lo, hi)
    return total


def _riemann_level(spec, d, N, minima, r, chunk=1 << 21):
    """Midpoint sum on the N^d grid of cell centres n/N, singular cells replaced."""
    side = side_range(N) / N
    h = 1.0 / N
    omega_min = minima.omega_min
    r = None if r is None else np.asarray(r, dtype=float)
    # cells holding a minimum
    sing = []
    for m in minima.minima:
        c = wrap(np.rint(m.k0 * N).astype(np.int64), N)
        sing.append((tuple(c.tolist()), m))
    sing_cells = {c for c, _ in sing}

    total = 0.0 + 0.0j
    inner = N ** (d - 1)
    slab = max(1, chunk // inner)
    rest = np.stack(np.meshgrid(*([side] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    for start in range(0, N, slab):
        first = side[start:start + slab]
        k = np.concatenate(
            [np.repeat(first, rest.shape[0])[:, None], np.tile(rest, (first.size, 1))], axis=1
        )
        diff = spec(k) - omega_min
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 1.0 / diff
            if r is not None:
                val = val * np.exp(2j * np.pi * (k @ r))
        # drop singular cells from the midpoint sum
        if sing_cells:
            n = np.rint(k * N).astype(np.int64)
            mask = np.zeros(len(k), dtype=bool)
            for c in sing_cells:
                mask |= np.all(n == np.array(c), axis=1)
            val = np.where(mask, 0.0, val)
        total += np.sum(val)
    total *= h**d
    for c, m in sing:
        centre = np.array(c) / N
        off = torus_delta(centre, m.k0)
        lo, hi = off - h / 2, off + h / 2
        w = quadratic_box_integral(m.hessian, lo, hi)
        if r is not None:
            w = w * np.exp(2j * np.pi * (m.k0 @ r))
        total += w
    return total


def _richardson(values, exponents):
    """Extrapolated values for nested halvings of the step (ratio 2)."""
    table = [list(values)]
    for p in exponents:
        prev = table[-1]
        if len(prev) < 2:
            break
        f = 2.0**p
        table.append([(f * prev[i + 1] - prev[i]) / (f - 1) for i in range(len(prev) - 1)])
    return table


def torus_integral(spec, d, r=None, tol=1e-6, n_start=16, n_max=None, minima=None):
    """Integral over the unit torus of exp(i 2 pi k.r) / (omega(k) - omega_min).

    Midpoint sums on nested grids N = n_start, 2 n_start, ...; cells holding
    a minimum are integrated with the local quadratic model.  The sequence
    is Richardson-extrapolated in powers N^-(d-2), N^-(d-1), ...

    Returns ``(value, error_estimate)``.
    """
    if d < 3:
        raise ValueError("the integral diverges for d < 3")
    if minima is None:
        minima = detect_minima(spec, LatticeSpec(d, max(8, n_start)))
    if n_max is None:
        n_max = int(2 ** np.floor(np.log2((1 << 25) ** (1.0 / d))))
    levels, Ns = [], []
    N = n_start
    best, err = None, np.inf
    exps = [d - 2 + j for j in range(8)]
    while N <= n_max:
        levels.append(_riemann_level(spec, d, N, minima, r))
        Ns.append(N)
        if len(levels) >= 3:
            tab = _richardson(levels, exps)
            last = tab[-1][-1]
            prev = tab[-2][-1]
            best, err = last, abs(last - prev)
            if err <= tol:
                break
        N *= 2
    if best is None or err > tol:
        raise ConvergenceError(
            f"torus integral not converged to {tol} (estimate {best}, error {err})", best, err
        )
    if r is None:
        best = best.real
    return best, err


@lru_cache(maxsize=64)
def _rho_infinity_cached(spec, d, tol):
    value, _ = torus_integral(spec, d, None, tol)
    return float(value)


def rho_infinity(spec, d, tol=1e-6):
    """Continuum critical density, the integral of 1 / (omega - omega_min)."""
    if not spec.smooth:
        raise NonSmoothDispersionError("rho_infinity needs non-degenerate smooth minima")
    try:
        return _rho_infinity_cached(spec, d, tol)
    except TypeError:  # unhashable spec
        value, _ = torus_integral(spec, d, None, tol)
        return float(value)
