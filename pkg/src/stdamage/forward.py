"""Slab-by-slab solver for the fully discrete coupled elliptic/ODE state system."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .discretization import (DIRICHLET, FREE, ModelParams, QuadratureConfig, SpaceTimeField,
                             SpatialMesh1D, TemporalMesh, gauss01, l2_project_space, mass_bands,
                             stiffness_bands, time_average_load, to_free, tridiag_matvec,
                             tridiag_solve)
from .nonsmooth import RegularizationConfig

log = logging.getLogger(__name__)

WARN_MARGIN = 1.0
REFUSE_MARGIN = 2.0


class NonConvergence(RuntimeError):
    """Fixed-point iteration failed on a slab."""

    def __init__(self, message, slab=None, margin=None, iterations=None):
        super().__init__(message)
        self.slab = slab
        self.margin = margin
        self.iterations = iterations


class ContractionError(NonConvergence):
    """Refused up front: tau * beta / delta is too large for the Picard iteration."""


@dataclass(frozen=True)
class SolverConfig:
    fp_tol: float = 1e-12
    fp_maxit: int = 10000
    mass_mode: str = "consistent"
    regularization: RegularizationConfig = RegularizationConfig()
    closed_form: bool = False
    backend: str | None = None

    def __post_init__(self):
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be > 0")
        if self.fp_maxit < 1:
            raise ValueError("fp_maxit must be >= 1")
        if self.mass_mode not in ("consistent", "lumped"):
            raise ValueError(f"unknown mass_mode {self.mass_mode!r}")
        if self.closed_form and (self.mass_mode != "lumped" or not self.regularization.exact):
            raise ValueError("the closed-form step needs mass_mode='lumped' and the exact max")

    @property
    def epsilon(self) -> float:
        return self.regularization.epsilon


@dataclass(frozen=True)
class ContractionReport:
    indicator: float  # max_m tau_m beta / delta
    sufficient: float  # max_m tau_m beta / delta (1 + L_Phi), L_Phi = 1
    level: str  # "ok" | "warn" | "error"


def check_contraction(params: ModelParams, tmesh: TemporalMesh) -> ContractionReport:
    ind = tmesh.tau_max * params.beta / params.delta
    level = "error" if ind >= REFUSE_MARGIN else "warn" if ind >= WARN_MARGIN else "ok"
    if level == "warn":
        log.warning("tau*beta/delta = %.3g >= 1: fixed-point iteration may not contract", ind)
    elif level == "error":
        log.error("tau*beta/delta = %.3g >= 2: fixed-point iteration will not converge", ind)
    return ContractionReport(ind, 2.0 * ind, level)


class SlabOperators:
    """Banded spatial operators shared by every slab of a solve."""

    def __init__(self, params: ModelParams, smesh: SpatialMesh1D,
                 quad: QuadratureConfig = QuadratureConfig()):
        self.params = params
        self.smesh = smesh
        self.quad = quad
        self.m_diag, self.m_off = mass_bands(smesh, FREE)
        self.lump = mass_bands(smesh, FREE, "lumped")[0]
        md, mo = mass_bands(smesh, DIRICHLET)
        kd, ko = stiffness_bands(smesh, DIRICHLET)
        self.a_diag = params.alpha * kd + params.beta * md
        self.a_off = params.alpha * ko + params.beta * mo
        self.mdir_diag, self.mdir_off = md, mo
        self.h = smesh.h.copy()
        self.xi, self.wq = gauss01(quad.q_space)

    def control_load(self, l_slab):
        """(l, psi) over interior hats for a P1 control given at interior or all nodes."""
        lf = to_free(l_slab, self.smesh)
        return tridiag_matvec(self.m_diag, self.m_off, lf)[1:-1]

    def elliptic(self, load, d_slab):
        rhs = self.params.beta * tridiag_matvec(self.m_diag, self.m_off, d_slab)[1:-1] + load
        return tridiag_solve(self.a_diag, self.a_off, rhs)


def elliptic_solve(load, d_slab, params: ModelParams, mesh: SpatialMesh1D):
    """Solve (alpha K + beta M) phi = beta M d + load on the interior nodes."""
    return SlabOperators(params, mesh).elliptic(np.asarray(load, float), np.asarray(d_slab, float))


def _slab_c(params, tmesh, m):
    return tmesh.lengths[m - 1] / params.delta


def step_fixed_point(d_prev, m: int, load, params: ModelParams, tmesh: TemporalMesh,
                     smesh: SpatialMesh1D, config: SolverConfig = SolverConfig(),
                     quad: QuadratureConfig = QuadratureConfig(), ops: SlabOperators | None = None):
    """One slab of Picard iteration; returns (phi_m interior, d_m all nodes, iterations)."""
    ops = ops or SlabOperators(params, smesh, quad)
    k = kernels.get(config.backend)
    phi = np.zeros(smesh.N + 1)
    d = np.empty(smesh.N + 1)
    it = k.fixed_point_slab(ops.m_diag, ops.m_off, ops.lump, ops.a_diag, ops.a_off, ops.h,
                            ops.xi, ops.wq, np.ascontiguousarray(load, dtype=float),
                            np.ascontiguousarray(d_prev, dtype=float), params.beta, params.r,
                            _slab_c(params, tmesh, m), config.epsilon,
                            config.mass_mode == "lumped", config.fp_tol, config.fp_maxit, phi, d)
    if it < 0:
        margin = tmesh.lengths[m - 1] * params.beta / params.delta
        raise NonConvergence(
            f"fixed-point iteration did not converge on slab {m} after {-it} iterations "
            f"(tau*beta/delta = {margin:.3g})", slab=m, margin=margin, iterations=-it)
    return phi[1:-1], d, it


def step_closed_form(d_prev, m: int, load, params: ModelParams, tmesh: TemporalMesh,
                     smesh: SpatialMesh1D, config: SolverConfig = SolverConfig(mass_mode="lumped"),
                     quad: QuadratureConfig = QuadratureConfig(), ops: SlabOperators | None = None):
    """Lumped slab step: outer iteration in phi, exact nodal d update per sweep."""
    if config.mass_mode != "lumped" or not config.regularization.exact:
        raise ValueError("closed-form step requires lumped mass and the exact max")
    ops = ops or SlabOperators(params, smesh, quad)
    k = kernels.get(config.backend)
    phi = np.zeros(smesh.N + 1)
    d = np.empty(smesh.N + 1)
    it = k.closed_form_slab(ops.m_diag, ops.m_off, ops.lump, ops.a_diag, ops.a_off,
                            np.ascontiguousarray(load, dtype=float),
                            np.ascontiguousarray(d_prev, dtype=float), params.beta, params.r,
                            _slab_c(params, tmesh, m), config.fp_tol, config.fp_maxit, phi, d)
    if it < 0:
        margin = tmesh.lengths[m - 1] * params.beta / params.delta
        raise NonConvergence(f"closed-form outer iteration did not converge on slab {m}",
                             slab=m, margin=margin, iterations=-it)
    return phi[1:-1], d, it


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    phi: SpaceTimeField
    d: SpaceTimeField
    d_initial: np.ndarray = field(repr=False)
    fp_iterations: np.ndarray = field(repr=False)
    contraction_margin: float = 0.0


def initial_state(d0, smesh: SpatialMesh1D, quad: QuadratureConfig = QuadratureConfig()):
    if callable(d0):
        return l2_project_space(d0, smesh, FREE, quad)
    d0 = np.asarray(d0, dtype=float)
    if d0.ndim == 0:
        return l2_project_space(lambda x: np.full_like(x, float(d0)), smesh, FREE, quad)
    return to_free(d0, smesh).copy()


LOAD_RULES = ("average", "nodal")


def control_loads(l, params, tmesh, smesh, quad, ops, load_rule="average"):
    """Per-slab interior load vectors of a control (dG(0) field or analytic l(t, x)).

    Analytic controls enter either as the slab average of l tested against the
    hats (``average``) or through the P1 nodal interpolant of l(t_m) over all nodes,
    boundary included, at the right slab endpoint (``nodal``).
    """
    if isinstance(l, SpaceTimeField):
        return np.array([ops.control_load(row) for row in l.coeffs])
    if callable(l):
        if load_rule == "average":
            return np.array([time_average_load(l, m, tmesh, smesh, DIRICHLET, quad)
                             for m in range(1, tmesh.M + 1)])
        if load_rule == "nodal":
            return np.array([ops.control_load(l(t, smesh.nodes)) for t in tmesh.points[1:]])
        raise ValueError(f"load_rule must be one of {LOAD_RULES}, got {load_rule!r}")
    loads = np.asarray(l, dtype=float)
    if loads.shape != (tmesh.M, smesh.N - 1):
        raise ValueError("precomputed loads must have shape (M, N-1)")
    return loads


def solve_forward(l, d0, params: ModelParams, tmesh: TemporalMesh, smesh: SpatialMesh1D,
                  config: SolverConfig = SolverConfig(),
                  quad: QuadratureConfig = QuadratureConfig(),
                  ops: SlabOperators | None = None, load_rule: str = "average") -> ForwardSolution:
    """March the coupled system over all slabs.

    ``l`` is a dG(0) control field, an analytic l(t, x), or an (M, N-1) array of
    precomputed interior loads; ``load_rule`` applies to the analytic case.
    """
    report = check_contraction(params, tmesh)
    if report.level == "error":
        raise ContractionError(
            f"refusing to solve: tau*beta/delta = {report.indicator:.3g} >= {REFUSE_MARGIN}",
            margin=report.indicator)
    ops = ops or SlabOperators(params, smesh, quad)
    loads = control_loads(l, params, tmesh, smesh, quad, ops, load_rule)
    step = step_closed_form if config.closed_form else step_fixed_point
    d_init = initial_state(d0, smesh, quad)
    phi = np.empty((tmesh.M, smesh.N - 1))
    d = np.empty((tmesh.M, smesh.N + 1))
    iters = np.empty(tmesh.M, dtype=int)
    prev = d_init
    for m in range(1, tmesh.M + 1):
        phi[m - 1], d[m - 1], iters[m - 1] = step(prev, m, loads[m - 1], params, tmesh, smesh,
                                                  config, quad, ops)
        prev = d[m - 1]
    return ForwardSolution(SpaceTimeField(DIRICHLET, phi, tmesh, smesh),
                           SpaceTimeField(FREE, d, tmesh, smesh), d_init, iters,
                           report.indicator)
