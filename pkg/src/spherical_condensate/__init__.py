"""Simulation and verification toolkit for supercritical spherical models."""
__version__ = "0.1.0"

from .dispersion import (
    Acoustic,
    Anisotropic,
    CustomTable,
    DoubledSine,
    NearestNeighbour,
    ProductShifted,
    Shifted,
    detect_minima,
    energy_table,
    energy_table_from_values,
    rho_infinity,
    torus_integral,
)
from .estimators import (
    MomentSpec,
    compare_mu0_mu1_moments,
    critical_gff_covariance,
    estimate_moment,
    estimate_moments,
    estimate_w2_gamma1,
    estimate_w2_upper_main,
    normal_fluid_covariance_exact,
    sampler_for,
)
from .lattice import LatticeSpec, build_lattice, dft, idft_at, idft_full, wrap
from .measures import (
    change_of_variables_G,
    sample_coupling_gamma,
    sample_coupling_gamma1,
    sample_mu0,
    sample_mu1,
    sample_mu1prime,
    sample_normal_fluid,
    weight_g_unnormalized,
)
from .model import SphericalModel
from .oracle import SmallSystem, oracle_field_moment, oracle_mass_moments
from .split import (
    bound_report,
    check_assumptions,
    construct_split_lemma,
    construct_split_threshold,
    make_split,
)
