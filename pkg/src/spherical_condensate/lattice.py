"""Periodic lattice bookkeeping and Fourier synthesis.

Conventions used throughout the package:

* ``Lambda_L`` is ``{-(L-1)/2, ..., (L-1)/2}^d`` for odd ``L`` and
  ``{-L/2+1, ..., L/2}^d`` for even ``L``.
* Dual modes are ``k = n / L`` with ``n`` in ``Lambda_L``, enumerated
  lexicographically in ``n``.
* A field is a complex array of Fourier amplitudes ``Phi_k`` aligned with
  that enumeration (trailing axis of length ``V``).
* Position values are ``phi_x = (1/V) sum_k Phi_k exp(i 2 pi k.x)`` and the
  norm is ``N[Phi] = (1/V) sum_k |Phi_k|^2 = sum_x |phi_x|^2``.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_INT64_MAX = np.iinfo(np.int64).max


class LatticeSizeError(ValueError):
    """Raised when L**d does not fit the index arithmetic."""


def side_range(L):
    """Integer coordinates of one lattice side, ascending."""
    if L % 2:
        h = (L - 1) // 2
        return np.arange(-h, h + 1)
    return np.arange(-L // 2 + 1, L // 2 + 1)


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic box of side ``L`` in ``d`` dimensions."""

    d: int
    L: int
    V: int = field(init=False)

    def __post_init__(self):
        d, L = int(self.d), int(self.L)
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if L < 2:
            raise ValueError(f"side length must be >= 2, got {self.L}")
        V = L**d  # python int, exact
        if V > _INT64_MAX:
            raise LatticeSizeError(f"L**d = {L}**{d} overflows int64")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "V", V)

    @cached_property
    def modes(self):
        """Integer vectors ``n``, shape (V, d), lexicographic order."""
        side = side_range(self.L)
        grids = np.meshgrid(*([side] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)

    @property
    def k(self):
        """Wave vectors ``n / L``, shape (V, d)."""
        return self.modes / self.L

    @property
    def sites(self):
        """Position-space sites; the same set as the mode indices."""
        return self.modes

    def index_of(self, n):
        """Position of integer vector(s) ``n`` in the enumeration."""
        n = wrap(np.asarray(n, dtype=np.int64), self.L)
        lo = side_range(self.L)[0]
        digits = n - lo
        idx = np.zeros(digits.shape[:-1], dtype=np.int64)
        for i in range(self.d):
            idx = idx * self.L + digits[..., i]
        return idx

    def to_dict(self):
        return {"d": self.d, "L": self.L}


def build_lattice(d, L):
    """Return the lattice spec; its ``modes`` hold the ordered enumeration."""
    return LatticeSpec(d, L)


def wrap(x, L):
    """Periodic representative of ``x`` in ``Lambda_L`` (componentwise)."""
    x = np.asarray(x, dtype=np.int64)
    lo = int(side_range(L)[0])
    return (x - lo) % L + lo


def _phases(lattice, x):
    # exp(i 2 pi k.x) for every mode, trailing axis over modes
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    # integer arithmetic first keeps the phase argument exact mod L
    nx = (x @ lattice.modes.T) % lattice.L
    return np.exp(2j * np.pi * nx / lattice.L)


def idft_at(field_, lattice, x):
    """Position value(s) ``phi_x`` by direct summation.

    ``field_`` may be a single field (V,) or a batch (..., V); ``x`` a single
    site (d,) or several (m, d).  Returns shape (...,) or (..., m).
    """
    field_ = np.asarray(field_)
    x = np.asarray(x)
    ph = _phases(lattice, x)  # (m, V)
    out = field_ @ ph.T / lattice.V
    if x.ndim == 1:
        out = out[..., 0]
    return out


def _fft_order(lattice):
    # permutation from lexicographic Lambda_L order to numpy FFT order (n mod L)
    idx = lattice.modes % lattice.L
    flat = np.zeros(lattice.V, dtype=np.int64)
    for i in range(lattice.d):
        flat = flat * lattice.L + idx[:, i]
    return flat


def idft_full(field_, lattice):
    """Position values at every site, in the same order as ``lattice.sites``.

    Uses an FFT; agrees with :func:`idft_at` to rounding.
    """
    field_ = np.asarray(field_, dtype=complex)
    batch = field_.shape[:-1]
    perm = _fft_order(lattice)
    grid = np.zeros(batch + (lattice.V,), dtype=complex)
    grid[..., perm] = field_
    grid = grid.reshape(batch + (lattice.L,) * lattice.d)
    axes = tuple(range(len(batch), len(batch) + lattice.d))
    # numpy's ifftn already carries the 1/V factor
    pos = np.fft.ifftn(grid, axes=axes).reshape(batch + (lattice.V,))
    return pos[..., perm]


def dft(values, lattice):
    """Forward transform ``Phi_k = sum_x f(x) exp(-i 2 pi k.x)``."""
    values = np.asarray(values, dtype=complex)
    batch = values.shape[:-1]
    perm = _fft_order(lattice)
    grid = np.zeros(batch + (lattice.V,), dtype=complex)
    grid[..., perm] = values
    grid = grid.reshape(batch + (lattice.L,) * lattice.d)
    axes = tuple(range(len(batch), len(batch) + lattice.d))
    out = np.fft.fftn(grid, axes=axes).reshape(batch + (lattice.V,))
    return out[..., perm]
