"""Coarse-grained and effective Langevin dynamics with verified error bounds.

Submodules: ``model`` (potentials, maps, Gibbs measures), ``sampling``,
``integrators``, ``closure``, ``fpgrid``, ``metrics``, ``funcineq``,
``ratefn``, ``gaussref`` and ``bench``.
"""

from .closure import ClosureEstimator, cg_coefficients, effective_coefficients
from .errors import CgBoundsError, ConfigError, NumericalError
from .funcineq import ConstantsReport, alpha_constants, ctilde, kappa_relent
from .grids import Grid, GridDensity
from .integrators import CoefficientField, SdeConfig
from .metrics import fisher_information, relative_entropy, wasserstein2
from .model import CoarseMap, GibbsMeasure, Potential, catalog_map, catalog_potential
from .ratefn import BoundReport, assemble_bound, rate_functional

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "CgBoundsError", "ClosureEstimator", "CoarseMap", "CoefficientField", "ConfigError",
    "ConstantsReport", "GibbsMeasure", "Grid", "GridDensity", "NumericalError", "Potential", "SdeConfig",
    "alpha_constants", "assemble_bound", "catalog_map", "catalog_potential", "cg_coefficients", "ctilde",
    "effective_coefficients", "fisher_information", "kappa_relent", "rate_functional", "relative_entropy",
    "wasserstein2",
]
