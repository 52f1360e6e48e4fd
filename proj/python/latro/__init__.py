"""Lattice hyperelasticity with reduced-basis local operators."""

from ._latro import (
    ConfigError,
    DomainError,
    GeometryError,
    LatroError,
    Material,
    NonConvergenceError,
    cauchy_stress,
    greedy_select,
    model_size,
    run,
    solve,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "GeometryError",
    "LatroError",
    "Material",
    "NonConvergenceError",
    "cauchy_stress",
    "greedy_select",
    "model_size",
    "run",
    "solve",
]
