"""Estimator-style facade bundling table, split, reports and samplers."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import measures
from .dispersion import NearestNeighbour, energy_table, rho_infinity
from .lattice import build_lattice
from .split import (
    LemmaPreconditionError,
    bound_report,
    check_assumptions,
    construct_split_lemma,
    construct_split_threshold,
)
from .dispersion import NonSmoothDispersionError
from .streams import check_rng

_SAMPLERS = {
    "mu0": measures.sample_mu0,
    "mu1": measures.sample_mu1,
    "mu1prime": measures.sample_mu1prime,
}


def check_fields(X, n_modes):
    """Validate a batch of complex fields of shape (n, n_modes)."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_modes:
        raise ValueError(f"expected fields of shape (n, {n_modes}), got {X.shape}")
    if not np.issubdtype(X.dtype, np.number):
        raise TypeError("fields must be numeric")
    X = X.astype(complex, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("fields contain NaN or inf")
    return X


class SphericalModel(BaseEstimator):
    """Supercritical spherical model on a periodic lattice.

    Parameters
    ----------
    dispersion : Dispersion, default NearestNeighbour()
    d, L : int
        Dimension and side length.
    rho : float or None
        Density.  If None, ``rho_infinity + rho_excess`` is used.
    rho_excess : float
    split : {"auto", "lemma", "threshold"}
        "auto" tries the constructive split and falls back to a threshold
        split at ``cut`` (default 0) when its preconditions fail.
    kappa : float or None
        Exponent of the constructive split (None: (d-2)/(2 M0 + 1)).
    cut : float or None
        Threshold for threshold splits.
    enforce_l0 : bool
        Refuse constructive splits below the minimal size L0 of the gap construction.
    """

    def __init__(self, dispersion=None, d=3, L=8, rho=None, rho_excess=1.0, split="auto",
                 kappa=None, cut=None, enforce_l0=True):
        self.dispersion = dispersion
        self.d = d
        self.L = L
        self.rho = rho
        self.rho_excess = rho_excess
        self.split = split
        self.kappa = kappa
        self.cut = cut
        self.enforce_l0 = enforce_l0

    def fit(self, X=None, y=None):
        """Build the energy table, split and bound reports.  ``X`` is ignored."""
        spec = NearestNeighbour() if self.dispersion is None else self.dispersion
        if self.split not in ("auto", "lemma", "threshold"):
            raise ValueError(f"unknown split mode {self.split!r}")
        self.lattice_ = build_lattice(self.d, self.L)
        self.table_ = energy_table(spec, self.lattice_)
        self.split_note_ = None
        if self.split == "threshold":
            self.split_ = construct_split_threshold(self.table_, 0.0 if self.cut is None else self.cut)
        else:
            try:
                self.split_ = construct_split_lemma(self.table_, spec, self.kappa, self.enforce_l0)
            except (LemmaPreconditionError, NonSmoothDispersionError) as exc:
                if self.split == "lemma":
                    raise
                self.split_note_ = f"constructive split unavailable ({exc}); threshold split used"
                self.split_ = construct_split_threshold(self.table_, 0.0 if self.cut is None else self.cut)
        if self.rho is None:
            self.rho_ = rho_infinity(spec, self.d) + self.rho_excess
        else:
            self.rho_ = float(self.rho)
        self.assumptions_ = check_assumptions(self.table_, self.split_, self.rho_)
        self.bounds_ = bound_report(self.table_, self.split_, self.rho_)
        return self

    def _check(self):
        if not hasattr(self, "split_"):
            raise NotFittedError("call fit() first")

    def sample(self, n_samples=1, measure="mu0", random_state=None):
        """Draw fields from ``mu0``, ``mu1``, ``mu1prime`` or ``mu_plus``."""
        self._check()
        rng = check_rng(random_state)
        if measure == "mu_plus":
            return measures.sample_normal_fluid(self.table_, self.split_, rng, size=n_samples)
        try:
            fn = _SAMPLERS[measure]
        except KeyError:
            raise ValueError(f"unknown measure {measure!r}") from None
        return fn(self.table_, self.split_, self.rho_, rng, size=n_samples)

    def transform(self, X):
        """Columns rho0, rho_plus, E0, E_plus of each field."""
        self._check()
        X = check_fields(X, self.table_.n_modes)
        f = measures.functionals(X, self.table_, self.split_)
        return np.column_stack([f["rho0"], f["rho_plus"], f["E0"], f["E_plus"]])
