"""Manufactured solutions, space-time error norms, EOC tables and sweep drivers."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .discretization import (ModelParams, QuadratureConfig, SpaceTimeField, build_spatial_mesh,
                             build_temporal_mesh, gauss01, quadrature_points, eval_at_quadrature)
from .forward import NonConvergence, SolverConfig, solve_forward

log = logging.getLogger(__name__)


# -- manufactured solutions ------------------------------------------------

def _sin3(x):
    return np.sin(3.0 * np.pi * x)


def _t_active(x, p: ModelParams):
    s = _sin3(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0.0, p.r / (p.beta * np.where(s > 0.0, s, 1.0)), np.inf)


def _phi1(t, x, p):
    return _sin3(x) * t


def _phi1_xx(t, x, p):
    return -9.0 * np.pi**2 * _sin3(x) * t


def _active1(t, x, p):
    return (_sin3(x) > 0.0) & (t >= _t_active(x, p))


def _d1(t, x, p):
    s = _sin3(x)
    ta = _t_active(x, p)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.exp(p.beta / p.delta * np.minimum(ta - t, 0.0))
        val = s * t - p.r / p.beta - p.delta / p.beta * s * (1.0 - e)
    return np.where(_active1(t, x, p), val, 0.0)


def _d1_t(t, x, p):
    s = _sin3(x)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.exp(p.beta / p.delta * np.minimum(_t_active(x, p) - t, 0.0))
    return np.where(_active1(t, x, p), s * (1.0 - e), 0.0)


def _l1(t, x, p):
    return (9.0 * p.alpha * np.pi**2 + p.beta) * _phi1(t, x, p) - p.beta * _d1(t, x, p)


def _kinks1(t, x, p):
    s = _sin3(x)
    near_ta = np.abs(t - np.where(np.isfinite(_t_active(x, p)), _t_active(x, p), -1.0)) < 1e-6
    return (np.abs(s) < 1e-6) | near_ta


def _phi2_x(x, p):
    k = p.r / p.beta
    left = 9 * k * (-27 * x**4 + 30 * x**3 - 12 * x**2 + 2 * x)
    right = 9 * k * (-27 * x**4 + 78 * x**3 - 84 * x**2 + 40 * x - 7)
    return np.where(x <= 1 / 3, left, np.where(x < 2 / 3, k, right))


def _phi2(t, x, p):
    return np.broadcast_to(_phi2_x(np.asarray(x, float), p), np.broadcast(t, x).shape)


def _phi2_xx(t, x, p):
    k = p.r / p.beta
    left = 9 * k * (-324 * x**2 + 180 * x - 24)
    right = 9 * k * (-324 * x**2 + 468 * x - 168)
    val = np.where(x <= 1 / 3, left, np.where(x < 2 / 3, 0.0, right))
    return np.broadcast_to(val, np.broadcast(t, x).shape)


def _d2(t, x, p):
    excess = np.maximum(_phi2_x(np.asarray(x, float), p) - p.r / p.beta, 0.0)
    return excess * (1.0 - np.exp(-p.beta / p.delta * t))


def _d2_t(t, x, p):
    excess = np.maximum(_phi2_x(np.asarray(x, float), p) - p.r / p.beta, 0.0)
    return excess * p.beta / p.delta * np.exp(-p.beta / p.delta * t)


def _l2(t, x, p):
    return -p.alpha * _phi2_xx(t, x, p) + p.beta * _phi2(t, x, p) - p.beta * _d2(t, x, p)


def _kinks2(t, x, p):
    return np.min(np.abs(np.asarray(x)[..., None] - np.array([1 / 9, 1 / 3, 2 / 3, 8 / 9])),
                  axis=-1) < 1e-6


def _zero(t, x, p=None):
    return np.zeros(np.broadcast(t, x).shape)


def _zero_x(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution bundle; all space-time callables take (t, x) with broadcasting."""

    label: str
    params: ModelParams
    phi_exact: Callable
    d_exact: Callable
    l_exact: Callable
    phi_xx: Callable
    d_t: Callable
    d0: Callable = _zero_x
    t_active: Callable | None = None
    norm_variant: str = "seminorm"
    kinks: Callable | None = field(default=None, repr=False)
    a: float = 0.0
    b: float = 1.0


def case_one() -> ManufacturedCase:
    """Moving biactive set of measure zero; d has kinks moving in time."""
    p = ModelParams(alpha=1.0, beta=50.0, delta=0.1, r=0.25 * 50.0, T=1.0)
    return ManufacturedCase("case1", p, partial(_phi1, p=p), partial(_d1, p=p), partial(_l1, p=p),
                            partial(_phi1_xx, p=p), partial(_d1_t, p=p),
                            t_active=partial(_t_active, p=p), norm_variant="seminorm",
                            kinks=partial(_kinks1, p=p))


def case_two() -> ManufacturedCase:
    """Biactive set of positive measure on (1/3, 2/3) for all times."""
    p = ModelParams(alpha=1.0, beta=1.0, delta=0.1, r=0.25, T=1.0)
    return ManufacturedCase("case2", p, partial(_phi2, p=p), partial(_d2, p=p), partial(_l2, p=p),
                            partial(_phi2_xx, p=p), partial(_d2_t, p=p), norm_variant="full",
                            kinks=partial(_kinks2, p=p))


def zero_case(params: ModelParams | None = None) -> ManufacturedCase:
    p = params or ModelParams(1.0, 1.0, 1.0, 0.5)
    return ManufacturedCase("zero", p, _zero, _zero, _zero, _zero, _zero)


CASES = {1: case_one, 2: case_two}


def get_case(case_id) -> ManufacturedCase:
    try:
        return CASES[int(case_id)]()
    except (KeyError, ValueError):
        raise ValueError(f"unknown case {case_id!r}; choose 1 or 2") from None


def residual_check(case: ManufacturedCase, n_samples: int = 10_000, seed: int = 0) -> float:
    """Max strong-form residual of the exact solution at random points off the kinks."""
    rng = np.random.default_rng(seed)
    p = case.params
    t = rng.uniform(0.0, p.T, n_samples)
    x = rng.uniform(case.a, case.b, n_samples)
    if case.kinks is not None:
        keep = ~case.kinks(t, x)
        t, x = t[keep], x[keep]
    phi, d = case.phi_exact(t, x), case.d_exact(t, x)
    r_pde = -p.alpha * case.phi_xx(t, x) + p.beta * phi - p.beta * d - case.l_exact(t, x)
    r_ode = case.d_t(t, x) - np.maximum(-p.beta * (d - phi) - p.r, 0.0) / p.delta
    return float(max(np.abs(r_pde).max(initial=0.0), np.abs(r_ode).max(initial=0.0)))


# -- error norms -------------------------------------------------------------

TIME_RULES = ("gauss", "right")


def error_l2l2(u: SpaceTimeField, exact: Callable, quad: QuadratureConfig = QuadratureConfig(),
               time_rule: str = "gauss") -> float:
    """|| u - exact ||_{L2(I x Omega)} by tensor quadrature on every slab x element.

    ``time_rule="gauss"`` uses q_time Gauss points per slab; ``"right"`` samples the
    exact solution only at the slab endpoints t_m (rectangle rule), which measures
    the spatial error of the nodal values without the dG(0) time-averaging floor.
    """
    tm, sm = u.tmesh, u.smesh
    if time_rule == "gauss":
        st, wt = gauss01(quad.q_time)
    elif time_rule == "right":
        st, wt = np.ones(1), np.ones(1)
    else:
        raise ValueError(f"time_rule must be one of {TIME_RULES}, got {time_rule!r}")
    x, wx = quadrature_points(sm, quad.q_space)
    uq = eval_at_quadrature(u.nodal(), sm, quad.q_space)
    total = 0.0
    for m in range(tm.M):
        t0, tau = tm.points[m], tm.lengths[m]
        ex = exact((t0 + tau * st)[:, None, None], x[None])
        diff2 = (uq[m][None] - ex) ** 2
        total += tau * np.einsum("t,tnq,nq->", wt, diff2, wx)
    return math.sqrt(total)


def eoc(errors, params) -> list[float]:
    """Rates log(e_{k-1}/e_k) / log(p_{k-1}/p_k) for k >= 1."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(params, dtype=float)
    if e.size < 2 or e.size != h.size:
        raise ValueError("need at least two matching errors and parameters")
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    if np.any(np.diff(h) >= 0):
        raise ValueError("parameters must be strictly decreasing")
    return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


# -- convergence tables --------------------------------------------------------

STATE_COLUMNS = ("tau", "h", "err_phi", "eoc_phi", "err_d", "eoc_d")
CONTROL_COLUMNS = ("tau", "h", "err_l", "eoc_l")


@dataclass
class ConvergenceTable:
    """Rows are dicts keyed by ``columns``; None marks a blank EOC, NaN a failed solve."""

    columns: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, name):
        return [row[name] for row in self.rows]

    def fill_eoc(self, refined: str):
        err_cols = [c for c in self.columns if c.startswith("err_")]
        for ec in err_cols:
            rc = "eoc_" + ec[4:]
            prev = None
            for row in self.rows:
                row[rc] = None
                e = row[ec]
                if e is None or not np.isfinite(e):
                    prev = None
                    continue
                if prev is not None:
                    row[rc] = eoc([prev[ec], e], [prev[refined], row[refined]])[0]
                prev = row
        return self

    def format(self) -> str:
        head = " ".join(f"{c:>12}" for c in self.columns)
        lines = [head]
        for row in self.rows:
            cells = []
            for c in self.columns:
                v = row[c]
                if v is None:
                    cells.append(f"{'-':>12}")
                elif not np.isfinite(v):
                    cells.append(f"{'not conv.':>12}")
                elif c.startswith("eoc"):
                    cells.append(f"{v:12.2f}")
                else:
                    cells.append(f"{v:12.3e}")
            lines.append(" ".join(cells))
        return "\n".join(lines)


def _level_meshes(case, mode, fixed, level):
    p = case.params
    if mode == "refine_time":
        M, N = level, fixed
    elif mode == "refine_space":
        M, N = fixed, level
    else:
        raise ValueError(f"mode must be refine_time or refine_space, got {mode!r}")
    return build_temporal_mesh(p.T, M), build_spatial_mesh(case.a, case.b, N)


def default_time_rule(mode):
    return "right" if mode == "refine_space" else "gauss"


def _state_level(case_id, mode, fixed, level, config, quad, load_rule="nodal", time_rule=None):
    case = get_case(case_id) if not isinstance(case_id, ManufacturedCase) else case_id
    tm, sm = _level_meshes(case, mode, fixed, level)
    row = {"tau": tm.tau_max, "h": sm.h_max}
    try:
        sol = solve_forward(case.l_exact, case.d0, case.params, tm, sm, config, quad,
                            load_rule=load_rule)
    except NonConvergence as exc:
        log.warning("level %s: %s", level, exc)
        row.update(err_phi=math.nan, err_d=math.nan)
        return row
    rule = time_rule or default_time_rule(mode)
    row["err_phi"] = error_l2l2(sol.phi, case.phi_exact, quad, rule)
    row["err_d"] = error_l2l2(sol.d, case.d_exact, quad, rule)
    return row


def _map_levels(fn, levels, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, levels))
    return [fn(lv) for lv in levels]


def run_state_eoc(case, mode: str, fixed: int, levels, config: SolverConfig = SolverConfig(),
                  quad: QuadratureConfig = QuadratureConfig(), workers: int = 1,
                  load_rule: str = "nodal", time_rule: str | None = None) -> ConvergenceTable:
    """Forward solves over a refinement sweep; ``levels`` are M (refine_time) or N (refine_space).

    ``case`` may be a case id (1, 2) or a ManufacturedCase; pass an id when using workers > 1.
    By default the analytic control enters through its nodal interpolant at t_m and the
    error uses the endpoint rule in time for spatial sweeps, Gauss points otherwise.
    """
    label = case.label if isinstance(case, ManufacturedCase) else get_case(case).label
    fn = partial(_state_level, case, mode, fixed, config=config, quad=quad,
                 load_rule=load_rule, time_rule=time_rule)
    rows = _map_levels(fn, list(levels), workers)
    table = ConvergenceTable(STATE_COLUMNS, rows, {"case": label, "mode": mode, "fixed": fixed,
                                                   "load_rule": load_rule,
                                                   "time_rule": time_rule or default_time_rule(mode)})
    return table.fill_eoc("tau" if mode == "refine_time" else "h")


def _control_level(case_id, mode, fixed, level, solver, opt, quad, reference="analytic"):
    from .control import LineSearchFailure, control_error, optimize_case

    case = get_case(case_id) if not isinstance(case_id, ManufacturedCase) else case_id
    tm, sm = _level_meshes(case, mode, fixed, level)
    row = {"tau": tm.tau_max, "h": sm.h_max}
    try:
        res = optimize_case(case, tm, sm, solver, opt, quad)
    except (NonConvergence, LineSearchFailure) as exc:
        log.warning("level %s: %s", level, exc)
        row["err_l"] = math.nan
        return row
    if not res.converged:
        log.warning("level %s: descent stopped after %d iterations, |G| = %.3e",
                    level, res.iterations, res.grad_norm)
    row["err_l"] = control_error(res.l, case.l_exact, quad, reference)
    return row


def run_control_eoc(case, mode: str, fixed: int, levels, solver: SolverConfig = SolverConfig(),
                    opt=None, quad: QuadratureConfig = QuadratureConfig(), workers: int = 1,
                    reference: str = "analytic") -> ConvergenceTable:
    """Armijo descent per level, error of the optimal control against the analytic l."""
    from .control import OptimizerConfig

    opt = opt or OptimizerConfig()
    label = case.label if isinstance(case, ManufacturedCase) else get_case(case).label
    fn = partial(_control_level, case, mode, fixed, solver=solver, opt=opt, quad=quad,
                 reference=reference)
    rows = _map_levels(fn, list(levels), workers)
    table = ConvergenceTable(CONTROL_COLUMNS, rows, {"case": label, "mode": mode, "fixed": fixed,
                                                     "reference": reference})
    return table.fill_eoc("tau" if mode == "refine_time" else "h")


def gradcheck_setup(M: int = 4, N: int = 8, epsilon: float = 1e-3, mass_mode: str = "consistent",
                    norm_variant: str = "seminorm", seed: int = 0):
    """Small admissible problem with partly active dynamics for the gradient check.

    Uses beta = delta = 1 so that tau beta / delta = 1/M, desired states shifted off
    case 2, and a control near 1.5 Pi l_2 with noise; returns (problem, control).
    """
    from .control import ControlNorm, ControlProblem, OptimizerConfig

    c = case_two()
    p = ModelParams(alpha=1.0, beta=1.0, delta=1.0, r=0.25)
    tm, sm = build_temporal_mesh(1.0, M), build_spatial_mesh(0.0, 1.0, N)
    prob = ControlProblem(
        p, tm, sm,
        phi_d=partial(_shifted, c.phi_exact, 0.1, _sin_shift),
        d_d=partial(_shifted, c.d_exact, 0.05, _cos_shift),
        l_ref=c.l_exact, norm=ControlNorm(norm_variant),
        solver=SolverConfig(fp_tol=1e-14, mass_mode=mass_mode),
        opt=OptimizerConfig(alpha_l=1e-2, epsilon=epsilon))
    rng = np.random.default_rng(seed)
    l = prob.l_ref * 1.5 + prob.l_ref.replace(rng.normal(0.0, 0.3, prob.l_ref.coeffs.shape))
    return prob, l


def _sin_shift(t, x):
    return np.sin(3 * x + t)


def _cos_shift(t, x):
    return np.cos(x) + 0 * t


def _shifted(f, a, g, t, x):
    return f(t, x) + a * g(t, x)
