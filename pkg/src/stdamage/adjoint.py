"""Exact discrete adjoint of the regularized state scheme, marched backward in time.

Per slab the coupled pair for (z_m, p_m) is

    (alpha K + beta M) z_m - (beta/delta) E G_m p_m = -tau_m^-1 (tau_m M phi_m - b^phi_m)
    -tau_m beta M E^T z_m + (M + (tau_m beta/delta) G_m) p_m = M p_{m+1} - (tau_m M d_m - b^d_m)

with G_m the mass matrix weighted by max_eps'(driver) and E the restriction to
interior nodes.  The pair is the transpose of the forward slab Jacobian, so it is
solved directly as one sparse block system instead of by inner sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretization import (DIRICHLET, FREE, QuadratureConfig, SpaceTimeField, SpatialMesh1D,
                             TemporalMesh, assemble_mass, assemble_stiffness, bands_to_sparse,
                             eval_at_quadrature, gauss01, load_from_quadrature, mass_bands,
                             quadrature_points, tridiag_matvec, tridiag_solve, weighted_mass_bands)
from .forward import ForwardSolution, SolverConfig
from .nonsmooth import driver

__all__ = ["Tracking", "AdjointSolution", "solve_adjoint", "compute_multiplier",
           "driver_derivative"]


class Tracking:
    """Space-time tracking term 1/2 ||u - u_d||^2_{L2(I x Omega)} for a dG(0)cG(1) field.

    The desired state is integrated once per slab by tensor Gauss quadrature, so
    value(u) = 1/2 sum_m (tau_m u_m^T M u_m - 2 u_m . b_m + c_m) is exact in u.
    """

    def __init__(self, desired, kind: str, tmesh: TemporalMesh, smesh: SpatialMesh1D,
                 quad: QuadratureConfig = QuadratureConfig()):
        self.kind, self.tmesh, self.smesh = kind, tmesh, smesh
        self.m_diag, self.m_off = mass_bands(smesh, kind)
        st, wt = gauss01(quad.q_time)
        x, wx = quadrature_points(smesh, quad.q_space)
        M, n = tmesh.M, smesh.ndof(kind)
        self.b = np.zeros((M, n))
        self.c = np.zeros(M)
        if desired is None:
            return
        for m in range(M):
            t0, tau = tmesh.points[m], tmesh.lengths[m]
            vals = desired((t0 + tau * st)[:, None, None], x[None])
            vals = np.broadcast_to(vals, (st.size,) + x.shape)
            avg = np.einsum("t,tnq->nq", wt, vals)
            self.b[m] = tau * load_from_quadrature(avg, smesh, kind)
            self.c[m] = tau * np.einsum("t,tnq,nq->", wt, vals**2, wx)

    def value(self, coeffs) -> float:
        u = np.asarray(coeffs, dtype=float)
        tau = self.tmesh.lengths
        quad = np.einsum("m,mi,mi->", tau, u, self._mass_rows(u))
        return 0.5 * (quad - 2.0 * np.sum(u * self.b) + self.c.sum())

    def gradient(self, coeffs) -> np.ndarray:
        """Euclidean gradient with respect to the slab coefficients, row m = tau_m M u_m - b_m."""
        u = np.asarray(coeffs, dtype=float)
        return self.tmesh.lengths[:, None] * self._mass_rows(u) - self.b

    def _mass_rows(self, u):
        return tridiag_matvec(self.m_diag, self.m_off, u)


def driver_derivative(phi_slab, d_slab, params, smesh, config: SolverConfig,
                      quad: QuadratureConfig = QuadratureConfig()):
    """max_eps' of the driver: at Gauss points (N, q) in consistent mode, at nodes in lumped mode."""
    reg = config.regularization
    if config.mass_mode == "lumped":
        phi = np.zeros(smesh.N + 1)
        phi[1:-1] = phi_slab
        return reg.derivative(driver(phi, d_slab, params))
    phi_q = eval_at_quadrature(phi_slab, smesh, quad.q_space)
    d_q = eval_at_quadrature(d_slab, smesh, quad.q_space)
    return reg.derivative(driver(phi_q, d_q, params))


def compute_multiplier(p: SpaceTimeField, g, quad: QuadratureConfig = QuadratureConfig(),
                       mode: str = "consistent") -> SpaceTimeField:
    """Regularized multiplier mu = g p, stored at the nodes.

    ``g`` holds one row per slab, at nodes (lumped) or at Gauss points (consistent,
    shape (M, N, q)); the consistent product is L2-projected back to P1.
    """
    g = np.asarray(g, dtype=float)
    pc = p.nodal()
    if mode == "lumped" or g.shape == pc.shape:
        return SpaceTimeField(FREE, g * pc, p.tmesh, p.smesh)
    sm = p.smesh
    md, mo = mass_bands(sm, FREE)
    rows = []
    for m in range(p.tmesh.M):
        pq = eval_at_quadrature(pc[m], sm, g.shape[-1])
        rows.append(tridiag_solve(md, mo, load_from_quadrature(g[m] * pq, sm, FREE)))
    return SpaceTimeField(FREE, np.array(rows), p.tmesh, p.smesh)


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    z: SpaceTimeField
    p: SpaceTimeField
    mu: SpaceTimeField
    g: np.ndarray = field(repr=False)


def solve_adjoint(fwd: ForwardSolution, desired, params, config: SolverConfig = SolverConfig(),
                  quad: QuadratureConfig = QuadratureConfig(), tracking=None) -> AdjointSolution:
    """Backward solve of the discrete adjoint for tracking of (phi_d, d_d).

    ``desired`` is a pair of analytic callables (either may be None), or pass
    prebuilt ``tracking`` = (Tracking for phi, Tracking for d).
    """
    tm, sm = fwd.phi.tmesh, fwd.phi.smesh
    if config.closed_form:
        raise ValueError("the adjoint differentiates the fixed-point scheme, not the closed form")
    if tracking is None:
        phi_d, d_d = desired
        tracking = (Tracking(phi_d, DIRICHLET, tm, sm, quad), Tracking(d_d, FREE, tm, sm, quad))
    tr_phi, tr_d = tracking
    rhs_phi = -tr_phi.gradient(fwd.phi.coeffs)
    rhs_d = -tr_d.gradient(fwd.d.coeffs)

    lumped = config.mass_mode == "lumped"
    n = sm.N + 1
    A = (params.alpha * assemble_stiffness(sm, DIRICHLET)
         + params.beta * assemble_mass(sm, DIRICHLET)).tocsc()
    Mf = assemble_mass(sm, FREE).tocsr()
    lump = mass_bands(sm, FREE, "lumped")[0]
    # the ODE mass is lumped in lumped mode; the elliptic coupling keeps the consistent mass
    Mode = sp.diags(lump).tocsr() if lumped else Mf
    E = sp.eye(n, format="csr")[1:-1]
    MEt = (Mf @ E.T).tocsr()
    M, beta = tm.M, params.beta

    z = np.zeros((M, sm.N - 1))
    p = np.zeros((M, n))
    g_all = []
    p_next = np.zeros(n)
    for m in range(M - 1, -1, -1):
        tau = tm.lengths[m]
        g = driver_derivative(fwd.phi.coeffs[m], fwd.d.coeffs[m], params, sm, config, quad)
        g_all.append(g)
        if lumped:
            Gm = sp.diags(lump * g)
        else:
            Gm = bands_to_sparse(*weighted_mass_bands(sm, g))
        # unknowns scaled as (tau z, p): the block matrix is the transposed slab Jacobian
        K = sp.bmat([[A, -(tau * beta / params.delta) * (E @ Gm)],
                     [-beta * MEt, Mode + (tau * beta / params.delta) * Gm]], format="csc")
        rhs = np.concatenate([rhs_phi[m], Mode @ p_next + rhs_d[m]])
        sol = splu(K).solve(rhs)
        z[m] = sol[:sm.N - 1] / tau
        p[m] = sol[sm.N - 1:]
        p_next = p[m]
    g_all = np.array(g_all[::-1])
    pf = SpaceTimeField(FREE, p, tm, sm)
    mu = compute_multiplier(pf, g_all, quad, config.mass_mode)
    return AdjointSolution(SpaceTimeField(DIRICHLET, z, tm, sm), pf, mu, g_all)
