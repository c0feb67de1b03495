"""Numerical homogenization of damped wave equations: cell problems,
elliptic and trajectory rates, attractor distances and exponential
attractors."""

__version__ = "0.1.0"

from .grid import Grid, GridFunction, State, make_grid, norm  # noqa: E402
from .cell import CoefficientField, solve_cell, two_phase  # noqa: E402
from .elliptic import Corrector, assemble, resolvent_gap  # noqa: E402
from .wave import Nonlinearity, WaveSystem, evolve  # noqa: E402

__all__ = ["Grid", "GridFunction", "State", "make_grid", "norm", "CoefficientField", "solve_cell",
           "two_phase", "Corrector", "assemble", "resolvent_gap", "Nonlinearity", "WaveSystem", "evolve",
           "__version__"]
