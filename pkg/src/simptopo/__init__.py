"""2D SIMP topology optimization with optimality-criteria and projected-gradient updates."""

from .errors import (
    ActiveSetError,
    DegeneracyError,
    FeasibilityError,
    InnerLoopError,
    ParameterError,
    ProblemFileError,
    ScalingError,
    SimpTopoError,
    SolveError,
)
from .grid_fe import BoundaryConditions, StructuredGrid, assemble, element_stiffness, solve_equilibrium
from .optimizers import ConvergenceRecord, OcConfig, PgConfig, run_optimization
from .problems import ProblemDefinition, builtin_problem, dump_problem, load_problem
from .projection import (
    ActiveSet,
    MultiplierSet,
    ProjectedDirection,
    hestenes_multipliers,
    kkt_residual,
    least_squares_multipliers,
    project,
)
from .simp_model import DesignField, SimpMaterial, compliance_gradient, equilibrium
from .tension import TensionConfig, energy_split, principal_stresses, reduce_stresses, tension_gradient

__version__ = "0.1.0"

__all__ = [
    "ActiveSet", "ActiveSetError", "BoundaryConditions", "ConvergenceRecord", "DegeneracyError",
    "DesignField", "FeasibilityError", "InnerLoopError", "MultiplierSet", "OcConfig", "ParameterError",
    "PgConfig", "ProblemDefinition", "ProblemFileError", "ProjectedDirection", "ScalingError",
    "SimpMaterial", "SimpTopoError", "SolveError", "StructuredGrid", "TensionConfig", "assemble",
    "builtin_problem", "compliance_gradient", "dump_problem", "element_stiffness", "energy_split",
    "equilibrium", "hestenes_multipliers", "kkt_residual", "least_squares_multipliers", "load_problem",
    "principal_stresses", "project", "reduce_stresses", "run_optimization", "solve_equilibrium",
    "tension_gradient",
]
