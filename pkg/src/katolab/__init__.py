"""Numerical laboratory for square roots of divergence-form elliptic operators.

Periodic grids, dense operators ``-div A grad + kappa``, their holomorphic
functional calculus, square functions, dyadic Carleson machinery, the T(b)
stopping argument, the ``l^2(Z)`` counterexample and wave perturbation
bounds.
"""
from .elliptic import CoefficientField, EllipticOperator, assemble
from .exceptions import KatoLabError
from .funcalc import TGrid, fractional_power_apply, kato_ratio, sqrt_apply
from .grid import Grid, GridFunction, VectorField, make_torus_grid

__version__ = "0.1.0"

__all__ = [
    "CoefficientField",
    "EllipticOperator",
    "Grid",
    "GridFunction",
    "KatoLabError",
    "TGrid",
    "VectorField",
    "assemble",
    "fractional_power_apply",
    "kato_ratio",
    "make_torus_grid",
    "sqrt_apply",
]
