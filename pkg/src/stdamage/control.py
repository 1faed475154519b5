"""Reduced objective, L_sigma control geometry and Armijo gradient descent.

Controls are dG(0)cG(1) fields; by default they carry values at every node (kind
``free``), so data that does not vanish on the boundary stays representable.
The L_sigma inner product of two controls is

    (u, v)_{L_sigma} = sum_ij K_t[i, j] (u_i, v_j)_{L2(Omega)}

with K_t the temporal jump matrix of :class:`ControlNorm`.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import Tracking, solve_adjoint
from .discretization import (DIRICHLET, FREE, QuadratureConfig, SpaceTimeField, SpatialMesh1D,
                             TemporalMesh, l2_project_space, mass_bands, to_free, tridiag_matvec,
                             tridiag_solve)
from .forward import SlabOperators, SolverConfig, solve_forward
from .nonsmooth import RegularizationConfig

log = logging.getLogger(__name__)

NORM_VARIANTS = ("seminorm", "full")
REFERENCE_RULES = ("interpolate", "project")


class LineSearchFailure(RuntimeError):
    """Backtracking shrank the step below the floor without sufficient decrease."""


@dataclass(frozen=True)
class ControlNorm:
    variant: str = "seminorm"

    def __post_init__(self):
        if self.variant not in NORM_VARIANTS:
            raise ValueError(f"norm variant must be one of {NORM_VARIANTS}, got {self.variant!r}")

    def temporal_bands(self, tmesh: TemporalMesh):
        """(diag, off) of K_t; seminorm keeps the jump at t_0 against a zero ghost."""
        tau = tmesh.lengths
        inv = 1.0 / tau
        diag = inv.copy()
        diag[:-1] += inv[1:]
        off = -inv[1:]
        if self.variant == "full":
            diag[0] -= inv[0]
            diag += tau
        return diag, off


@dataclass(frozen=True)
class OptimizerConfig:
    alpha_l: float = 10.0
    epsilon: float = 1e-9
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    s0: float = 1.0
    grad_tol_abs: float = 1e-10
    grad_tol_rel: float = 1e-6
    maxit: int = 500
    min_step: float = 1e-14

    def __post_init__(self):
        if not self.alpha_l > 0:
            raise ValueError("alpha_l must be > 0")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not self.s0 > 0:
            raise ValueError("s0 must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.maxit < 0:
            raise ValueError("maxit must be >= 0")


@dataclass(eq=False)
class OptimResult:
    l: SpaceTimeField
    history: list = field(default_factory=list)  # (objective, ||G||_{L_sigma}, step)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)

    @property
    def objective(self) -> float:
        return self.history[-1][0]

    @property
    def grad_norm(self) -> float:
        return self.history[-1][1]


def _check_conform(u: SpaceTimeField, v: SpaceTimeField):
    if u.coeffs.shape != v.coeffs.shape or u.kind != v.kind:
        raise ValueError("fields live on different meshes or spaces")
    if u.tmesh is not v.tmesh and not np.array_equal(u.tmesh.points, v.tmesh.points):
        raise ValueError("fields live on different temporal meshes")
    if u.smesh is not v.smesh and not np.array_equal(u.smesh.nodes, v.smesh.nodes):
        raise ValueError("fields live on different spatial meshes")


def lsigma_inner(u: SpaceTimeField, v: SpaceTimeField, norm: ControlNorm = ControlNorm()) -> float:
    _check_conform(u, v)
    kd, ko = norm.temporal_bands(u.tmesh)
    md, mo = mass_bands(u.smesh, u.kind)
    ku = tridiag_matvec(kd, ko, u.coeffs.T).T
    return float(np.sum(ku * tridiag_matvec(md, mo, v.coeffs)))


def riesz_gradient(z: SpaceTimeField, l: SpaceTimeField, l_ref_proj: SpaceTimeField,
                   norm: ControlNorm, config: OptimizerConfig) -> SpaceTimeField:
    """G with (G, dl)_{L_sigma} = alpha_l (l - l_ref, dl)_{L_sigma} - sum_m tau_m (z_m, dl_m)."""
    _check_conform(l, l_ref_proj)
    kd, ko = norm.temporal_bands(l.tmesh)
    zc = to_free(z.coeffs, z.smesh) if l.kind == FREE else z.coeffs
    b = -l.tmesh.lengths[:, None] * zc
    h = tridiag_solve(kd, ko, b)
    return l.replace(config.alpha_l * (l.coeffs - l_ref_proj.coeffs) + h)


def project_reference(l_ref, tmesh: TemporalMesh, smesh: SpatialMesh1D,
                      quad: QuadratureConfig = QuadratureConfig(), kind: str = FREE,
                      rule: str = "interpolate") -> SpaceTimeField:
    """Pi l_ref from l_ref(t_m, .) at the right slab endpoints.

    ``interpolate`` takes P1 nodal values, ``project`` the spatial L2 projection.
    """
    if rule == "interpolate":
        x = smesh.nodes if kind == FREE else smesh.nodes[1:-1]
        rows = [np.broadcast_to(l_ref(t, x), x.shape) for t in tmesh.points[1:]]
    elif rule == "project":
        rows = [l2_project_space(lambda x, t=t: l_ref(t, x), smesh, kind, quad)
                for t in tmesh.points[1:]]
    else:
        raise ValueError(f"rule must be one of {REFERENCE_RULES}, got {rule!r}")
    return SpaceTimeField(kind, np.array(rows, dtype=float), tmesh, smesh)


def control_error(l: SpaceTimeField, l_bar, quad: QuadratureConfig = QuadratureConfig(),
                  reference: str = "analytic", rule: str = "interpolate") -> float:
    """||l_bar - l||_{L2(I x Omega)}; ``projected`` measures against Pi l_bar instead."""
    from .benchmarks import error_l2l2

    if reference == "analytic":
        return error_l2l2(l, l_bar, quad)
    if reference == "projected":
        ref = project_reference(l_bar, l.tmesh, l.smesh, quad, l.kind, rule)
        diff = (l - ref).coeffs
        md, mo = mass_bands(l.smesh, l.kind)
        return math.sqrt(float(np.einsum("m,mi,mi->", l.tmesh.lengths, diff,
                                         tridiag_matvec(md, mo, diff))))
    raise ValueError(f"reference must be 'analytic' or 'projected', got {reference!r}")


class ControlProblem:
    """Reduced functional j(l) = J(S_eps(l), l) on fixed meshes.

    ``phi_d``/``d_d`` are analytic desired states (or None), ``l_ref`` the analytic
    reference control of the regularizer (or None for zero), ``kind`` the control space.
    """

    def __init__(self, params, tmesh: TemporalMesh, smesh: SpatialMesh1D, phi_d=None, d_d=None,
                 l_ref=None, d0=0.0, norm: ControlNorm = ControlNorm(),
                 solver: SolverConfig = SolverConfig(), opt: OptimizerConfig = OptimizerConfig(),
                 quad: QuadratureConfig = QuadratureConfig(), kind: str = FREE,
                 reference_rule: str = "interpolate"):
        self.params, self.tmesh, self.smesh = params, tmesh, smesh
        self.norm, self.opt, self.quad, self.kind = norm, opt, quad, kind
        self.solver = dataclasses.replace(
            solver, regularization=RegularizationConfig(opt.epsilon), closed_form=False)
        self.d0 = d0
        self.tracking = (Tracking(phi_d, DIRICHLET, tmesh, smesh, quad),
                         Tracking(d_d, FREE, tmesh, smesh, quad))
        self.l_ref = (project_reference(l_ref, tmesh, smesh, quad, kind, reference_rule)
                      if l_ref is not None else SpaceTimeField.zeros(kind, tmesh, smesh))
        self.ops = SlabOperators(params, smesh, quad)

    @classmethod
    def from_case(cls, case, tmesh, smesh, solver=SolverConfig(), opt=OptimizerConfig(),
                  quad=QuadratureConfig(), **kw):
        return cls(case.params, tmesh, smesh, case.phi_exact, case.d_exact, case.l_exact,
                   case.d0, ControlNorm(case.norm_variant), solver, opt, quad, **kw)

    def zeros(self) -> SpaceTimeField:
        return SpaceTimeField.zeros(self.kind, self.tmesh, self.smesh)

    def inner(self, u, v) -> float:
        return lsigma_inner(u, v, self.norm)

    def state(self, l: SpaceTimeField):
        return solve_forward(l, self.d0, self.params, self.tmesh, self.smesh, self.solver,
                             self.quad, self.ops)

    def _value(self, l, fwd):
        du = l - self.l_ref
        return (self.tracking[0].value(fwd.phi.coeffs) + self.tracking[1].value(fwd.d.coeffs)
                + 0.5 * self.opt.alpha_l * self.inner(du, du))

    def value(self, l: SpaceTimeField) -> float:
        return self._value(l, self.state(l))

    def value_and_gradient(self, l: SpaceTimeField):
        """(j(l), Riesz gradient G in L_sigma, forward solution, adjoint solution)."""
        fwd = self.state(l)
        adj = solve_adjoint(fwd, None, self.params, self.solver, self.quad, self.tracking)
        grad = riesz_gradient(adj.z, l, self.l_ref, self.norm, self.opt)
        return self._value(l, fwd), grad, fwd, adj


class QuadraticProblem:
    """j(l) = (alpha_l / 2) ||l||^2_{L_sigma}; its Riesz gradient is alpha_l l."""

    def __init__(self, tmesh, smesh, norm: ControlNorm = ControlNorm(), alpha_l: float = 1.0,
                 kind: str = FREE):
        self.tmesh, self.smesh, self.norm, self.alpha_l = tmesh, smesh, norm, alpha_l
        self.kind = kind

    def zeros(self):
        return SpaceTimeField.zeros(self.kind, self.tmesh, self.smesh)

    def inner(self, u, v):
        return lsigma_inner(u, v, self.norm)

    def value(self, l):
        return 0.5 * self.alpha_l * self.inner(l, l)

    def value_and_gradient(self, l):
        return self.value(l), l * self.alpha_l, None, None


def objective(l: SpaceTimeField, case, tmesh, smesh, solver: SolverConfig = SolverConfig(),
              opt: OptimizerConfig = OptimizerConfig(),
              quad: QuadratureConfig = QuadratureConfig()) -> float:
    return ControlProblem.from_case(case, tmesh, smesh, solver, opt, quad).value(l)


def armijo_descent(problem, l_init: SpaceTimeField | None = None,
                   config: OptimizerConfig | None = None, callback=None) -> OptimResult:
    """Steepest descent in the L_sigma geometry with Armijo backtracking."""
    cfg = config or getattr(problem, "opt", OptimizerConfig())
    l = l_init if l_init is not None else problem.zeros()
    j, grad = problem.value_and_gradient(l)[:2]
    gnorm = math.sqrt(max(problem.inner(grad, grad), 0.0))
    tol = cfg.grad_tol_abs + cfg.grad_tol_rel * gnorm
    result = OptimResult(l, [(j, gnorm, 0.0)])
    s = cfg.s0
    for it in range(cfg.maxit):
        if gnorm <= tol:
            break
        g2 = gnorm * gnorm
        while True:
            trial = l - grad * s
            j_trial = problem.value(trial)
            if j_trial <= j - cfg.armijo_c * s * g2:
                break
            s *= cfg.backtrack
            if s < cfg.min_step:
                raise LineSearchFailure(f"step fell below {cfg.min_step:g} at iteration {it}")
        l = trial
        j, grad = problem.value_and_gradient(l)[:2]
        gnorm = math.sqrt(max(problem.inner(grad, grad), 0.0))
        result.l = l
        result.history.append((j, gnorm, s))
        log.debug("it %d: j=%.6e |G|=%.3e s=%.3g", it + 1, j, gnorm, s)
        if callback is not None:
            callback(it + 1, l, j, gnorm, s)
        s = min(2.0 * s, 1.0)
    result.converged = gnorm <= tol
    return result


def optimize_case(case, tmesh, smesh, solver: SolverConfig = SolverConfig(),
                  opt: OptimizerConfig = OptimizerConfig(), quad: QuadratureConfig = QuadratureConfig(),
                  l_init: SpaceTimeField | None = None, **kw) -> OptimResult:
    return armijo_descent(ControlProblem.from_case(case, tmesh, smesh, solver, opt, quad, **kw),
                          l_init, opt)


def gradient_check(problem, l: SpaceTimeField, n_dofs: int = 20, n_dirs: int = 10,
                   step: float = 1e-5, seed: int = 0) -> dict:
    """Adjoint gradient against central differences of ``problem.value``.

    Partial derivatives are taken for ``n_dofs`` random coefficients, directional
    ones for ``n_dirs`` Gaussian directions; returns the largest relative errors.
    """
    rng = np.random.default_rng(seed)
    _, grad = problem.value_and_gradient(l)[:2]
    shape = l.coeffs.shape
    flat = rng.choice(l.coeffs.size, size=min(n_dofs, l.coeffs.size), replace=False)
    dof_err, dir_err = [], []
    for k in flat:
        e = np.zeros(l.coeffs.size)
        e[k] = 1.0
        dl = l.replace(e.reshape(shape))
        an = problem.inner(grad, dl)
        fd = (problem.value(l + dl * step) - problem.value(l - dl * step)) / (2 * step)
        dof_err.append(abs(fd - an) / abs(an))
    for _ in range(n_dirs):
        dl = l.replace(rng.standard_normal(shape))
        an = problem.inner(grad, dl)
        fd = (problem.value(l + dl * step) - problem.value(l - dl * step)) / (2 * step)
        dir_err.append(abs(fd - an) / abs(an))
    return {"max_rel_dof": max(dof_err, default=0.0), "max_rel_dir": max(dir_err, default=0.0),
            "n_dofs": len(dof_err), "n_dirs": len(dir_err)}
