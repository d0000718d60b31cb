"""Numerical lab for anisotropic directional fractional Sobolev energies.

Grids and grid functions live in :mod:`anisofrac.core`, the energies in
:mod:`anisofrac.energy`, first variations in :mod:`anisofrac.operator`,
minimizers in :mod:`anisofrac.solver`, limit sweeps and audits in
:mod:`anisofrac.experiments` and the batch front end in :mod:`anisofrac.cli`.
"""

__version__ = "0.1.0"

from .core import (
    AnisoParams,
    AnisoSummary,
    GridFunction,
    GridMismatchError,
    GridSpec,
    ParameterError,
    SupercriticalError,
    SupportError,
    aniso_summary,
    load_grid_function,
    lp_norm,
    sample,
    save_grid_function,
)
from .energy import (
    DEFAULT_QUAD,
    EnergyBreakdown,
    QuadratureSpec,
    directional_energy,
    mollify,
    total_energy,
    truncate,
)
from .experiments import SweepTable, bbm_sweep, ground_state_sweep, inequality_audit, ms_sweep, stability_sweep
from .operator import Nonlinearity, energy_gradient, gateaux_energy, residual
from .solver import GroundStateResult, SolveOptions, SolveResult, SolverFailure, ground_state, solve_dirichlet

__all__ = [
    "AnisoParams",
    "AnisoSummary",
    "DEFAULT_QUAD",
    "EnergyBreakdown",
    "GridFunction",
    "GridMismatchError",
    "GridSpec",
    "GroundStateResult",
    "Nonlinearity",
    "ParameterError",
    "QuadratureSpec",
    "SolveOptions",
    "SolveResult",
    "SolverFailure",
    "SupercriticalError",
    "SupportError",
    "SweepTable",
    "aniso_summary",
    "bbm_sweep",
    "directional_energy",
    "energy_gradient",
    "gateaux_energy",
    "ground_state",
    "ground_state_sweep",
    "inequality_audit",
    "load_grid_function",
    "lp_norm",
    "mollify",
    "ms_sweep",
    "residual",
    "sample",
    "save_grid_function",
    "solve_dirichlet",
    "stability_sweep",
    "total_energy",
    "truncate",
]
