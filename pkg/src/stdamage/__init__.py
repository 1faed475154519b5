"""dG(0) x P1 solver and optimal control for a nonsmooth elliptic/ODE damage system."""

from .adjoint import solve_adjoint
from .control import (ControlNorm, ControlProblem, LineSearchFailure, OptimizerConfig,
                      armijo_descent, optimize_case)
from .discretization import (ModelParams, QuadratureConfig, SpaceTimeField, SpatialMesh1D,
                             TemporalMesh, build_spatial_mesh, build_temporal_mesh)
from .forward import (ContractionError, ForwardSolution, NonConvergence, SolverConfig,
                      solve_forward)
from .kernels import BACKEND
from .nonsmooth import RegularizationConfig

__version__ = "0.1.0"
