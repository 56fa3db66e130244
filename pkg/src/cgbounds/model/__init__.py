"""Potentials, Gibbs measures and coarse-graining maps."""

from .expr import CompiledExpression, Dual, ExpressionSyntaxError, parse
from .gibbs import GibbsMeasure, check_affine_at_infinity, local_mean_force, truncate_density
from .maps import (
    AffineData,
    CoarseMap,
    PhaseMap,
    affine_map,
    catalog_map,
    check_map,
    coordinate_map,
    expression_map,
    rotated_map,
)
from .potentials import (
    Potential,
    ScaleSplit,
    catalog_potential,
    check_derivatives,
    check_growth,
    coupled_quadratic,
    double_well_fast,
    from_expression,
    quadratic,
)

__all__ = [
    "AffineData", "CoarseMap", "CompiledExpression", "Dual", "ExpressionSyntaxError", "GibbsMeasure",
    "PhaseMap", "Potential", "ScaleSplit", "affine_map", "catalog_map", "catalog_potential",
    "check_affine_at_infinity", "check_derivatives", "check_growth", "check_map", "coordinate_map",
    "coupled_quadratic", "double_well_fast", "expression_map", "from_expression", "local_mean_force",
    "parse", "quadratic", "rotated_map", "truncate_density",
]
