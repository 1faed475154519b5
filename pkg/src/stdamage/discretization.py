"""Meshes, P1 assembly, projections and the dG(0) x P1 field container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solveh_banded

DIRICHLET = "dirichlet"
FREE = "free"
KINDS = (DIRICHLET, FREE)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    beta: float
    delta: float
    r: float
    T: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "delta", "r", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class TemporalMesh:
    points: np.ndarray

    def __post_init__(self):
        p = _frozen(self.points)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("need at least two time points")
        if p[0] != 0.0:
            raise ValueError("first time point must be 0")
        if np.any(np.diff(p) <= 0):
            raise ValueError("time points must be strictly increasing")
        object.__setattr__(self, "points", p)

    @property
    def M(self) -> int:
        return self.points.size - 1

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def tau_max(self) -> float:
        return float(self.lengths.max())


@dataclass(frozen=True, eq=False)
class SpatialMesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        x = _frozen(self.nodes)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("need N >= 2 elements")
        if np.any(np.diff(x) <= 0):
            raise ValueError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", x)

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h_max(self) -> float:
        return float(self.h.max())

    def ndof(self, kind: str) -> int:
        _check_kind(kind)
        return self.N + 1 if kind == FREE else self.N - 1


@dataclass(frozen=True)
class QuadratureConfig:
    q_time: int = 5
    q_space: int = 5

    def __post_init__(self):
        if self.q_time < 2 or self.q_space < 2:
            raise ValueError("need at least two Gauss points per slab/element")


def gauss01(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1] (weights sum to 1)."""
    xi, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (xi + 1.0), 0.5 * w


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def build_temporal_mesh(T: float, M: int) -> TemporalMesh:
    if not T > 0:
        raise ValueError("T must be > 0")
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    pts = np.linspace(0.0, T, int(M) + 1)
    pts[-1] = T
    return TemporalMesh(pts)


def build_spatial_mesh(a: float, b: float, N: int) -> SpatialMesh1D:
    if not a < b:
        raise ValueError("need a < b")
    if int(N) != N or N < 2:
        raise ValueError("N must be an integer >= 2")
    x = np.linspace(a, b, int(N) + 1)
    x[0], x[-1] = a, b
    return SpatialMesh1D(x)


# -- tridiagonal bands ---------------------------------------------------

def mass_bands(mesh: SpatialMesh1D, kind: str = FREE, mode: str = "consistent"):
    """(diag, off) of the symmetric tridiagonal P1 mass matrix."""
    _check_kind(kind)
    h = mesh.h
    diag = np.zeros(mesh.N + 1)
    diag[:-1] += h / 3.0
    diag[1:] += h / 3.0
    off = h / 6.0
    if mode == "lumped":
        diag = diag.copy()
        diag[:-1] += off
        diag[1:] += off
        off = np.zeros_like(off)
    elif mode != "consistent":
        raise ValueError(f"unknown mass mode {mode!r}")
    if kind == DIRICHLET:
        return diag[1:-1].copy(), off[1:-1].copy()
    return diag, off


def stiffness_bands(mesh: SpatialMesh1D, kind: str = FREE):
    _check_kind(kind)
    ih = 1.0 / mesh.h
    diag = np.zeros(mesh.N + 1)
    diag[:-1] += ih
    diag[1:] += ih
    off = -ih
    if kind == DIRICHLET:
        return diag[1:-1].copy(), off[1:-1].copy()
    return diag, off


def bands_to_sparse(diag, off):
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def tridiag_matvec(diag, off, v):
    """Symmetric tridiagonal product along the last axis of ``v``."""
    out = diag * v
    out[..., :-1] += off * v[..., 1:]
    out[..., 1:] += off * v[..., :-1]
    return out


def tridiag_solve(diag, off, rhs):
    """Solve a symmetric positive definite tridiagonal system (rhs may be 2-D)."""
    ab = np.empty((2, diag.size))
    ab[0, 0] = 0.0
    ab[0, 1:] = off
    ab[1] = diag
    return solveh_banded(ab, rhs, check_finite=False)


def assemble_mass(mesh: SpatialMesh1D, kind: str = FREE, mode: str = "consistent"):
    return bands_to_sparse(*mass_bands(mesh, kind, mode))


def assemble_stiffness(mesh: SpatialMesh1D, kind: str = FREE):
    return bands_to_sparse(*stiffness_bands(mesh, kind))


def weighted_mass_bands(mesh: SpatialMesh1D, weight):
    """Bands of sum_q weight * hat_i * hat_j for weight given at element Gauss points.

    Returned on the free node set as (diag, off); use :func:`assemble_weighted_mass`
    for the restricted sparse matrix.
    """
    weight = np.asarray(weight, dtype=float)
    if weight.ndim != 2 or weight.shape[0] != mesh.N:
        raise ValueError(f"weight must have shape (N={mesh.N}, q), got {weight.shape}")
    xi, w = gauss01(weight.shape[1])
    n0, n1 = 1.0 - xi, xi
    hw = weight * (mesh.h[:, None] * w[None, :])
    diag = np.zeros(mesh.N + 1)
    diag[:-1] += hw @ (n0 * n0)
    diag[1:] += hw @ (n1 * n1)
    off = hw @ (n0 * n1)
    return diag, off


def assemble_weighted_mass(mesh: SpatialMesh1D, kind_row: str, kind_col: str, weight):
    _check_kind(kind_row)
    _check_kind(kind_col)
    full = bands_to_sparse(*weighted_mass_bands(mesh, weight))
    rows = slice(1, -1) if kind_row == DIRICHLET else slice(None)
    cols = slice(1, -1) if kind_col == DIRICHLET else slice(None)
    return full[rows][:, cols].tocsr()


# -- quadrature-point evaluation and loads --------------------------------

def quadrature_points(mesh: SpatialMesh1D, q: int):
    """Physical Gauss points (N, q) and their weights including element length."""
    xi, w = gauss01(q)
    x = mesh.nodes[:-1, None] + mesh.h[:, None] * xi[None, :]
    return x, mesh.h[:, None] * w[None, :]


def to_free(values, mesh: SpatialMesh1D):
    """Embed interior-node values into the full node vector (zero at the boundary)."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] == mesh.N + 1:
        return values
    if values.shape[-1] != mesh.N - 1:
        raise ValueError("coefficient vector does not match the mesh")
    out = np.zeros(values.shape[:-1] + (mesh.N + 1,))
    out[..., 1:-1] = values
    return out


def eval_at_quadrature(values, mesh: SpatialMesh1D, q: int):
    """P1 interpolation of nodal values (either kind) at element Gauss points."""
    v = to_free(values, mesh)
    xi, _ = gauss01(q)
    return v[..., :-1, None] * (1.0 - xi) + v[..., 1:, None] * xi


def load_from_quadrature(values, mesh: SpatialMesh1D, kind: str = FREE):
    """Load vector sum_q wq h_e values * hat_i for values at element Gauss points (..., N, q)."""
    _check_kind(kind)
    values = np.asarray(values, dtype=float)
    q = values.shape[-1]
    xi, w = gauss01(q)
    hw = mesh.h[:, None] * w[None, :]
    vw = values * hw
    b = np.zeros(values.shape[:-2] + (mesh.N + 1,))
    b[..., :-1] += vw @ (1.0 - xi)
    b[..., 1:] += vw @ xi
    return b[..., 1:-1] if kind == DIRICHLET else b


def spatial_load(f: Callable, mesh: SpatialMesh1D, kind: str, quad: QuadratureConfig):
    x, _ = quadrature_points(mesh, quad.q_space)
    return load_from_quadrature(np.broadcast_to(f(x), x.shape), mesh, kind)


def l2_project_space(f, mesh: SpatialMesh1D, kind: str = FREE, quad: QuadratureConfig = QuadratureConfig()):
    """Spatial L2 projection of an analytic function onto the P1 space of the given kind."""
    b = spatial_load(f, mesh, kind, quad)
    return tridiag_solve(*mass_bands(mesh, kind), b)


def time_average_load(l, m: int, tmesh: TemporalMesh, smesh: SpatialMesh1D, kind: str = DIRICHLET,
                      quad: QuadratureConfig = QuadratureConfig()):
    """Load vector of the slab average (1/tau_m) int_{I_m} l(t, .) dt, slab m in 1..M."""
    if not 1 <= m <= tmesh.M:
        raise IndexError(f"slab {m} outside 1..{tmesh.M}")
    t0, t1 = tmesh.points[m - 1], tmesh.points[m]
    st, wt = gauss01(quad.q_time)
    ts = t0 + (t1 - t0) * st
    x, _ = quadrature_points(smesh, quad.q_space)
    vals = l(ts[:, None, None], x[None, :, :])
    vals = np.broadcast_to(vals, (ts.size,) + x.shape)
    avg = np.tensordot(wt, vals, axes=(0, 0))
    return load_from_quadrature(avg, smesh, kind)


# -- space-time fields ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """dG(0)-in-time x P1-in-space coefficients; row m-1 holds the values on slab I_m."""

    kind: str
    coeffs: np.ndarray
    tmesh: TemporalMesh = field(repr=False)
    smesh: SpatialMesh1D = field(repr=False)

    def __post_init__(self):
        _check_kind(self.kind)
        c = _frozen(self.coeffs)
        shape = (self.tmesh.M, self.smesh.ndof(self.kind))
        if c.shape != shape:
            raise ValueError(f"coefficients must have shape {shape}, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, kind, tmesh, smesh):
        return cls(kind, np.zeros((tmesh.M, smesh.ndof(kind))), tmesh, smesh)

    def replace(self, coeffs) -> "SpaceTimeField":
        return SpaceTimeField(self.kind, coeffs, self.tmesh, self.smesh)

    def nodal(self) -> np.ndarray:
        """Values at all nodes (boundary zeros included for the dirichlet kind)."""
        return to_free(self.coeffs, self.smesh)

    def __call__(self, t, x):
        """Evaluate at times t (slabs are left-open) and points x; t and x broadcast."""
        m = np.clip(np.searchsorted(self.tmesh.points, t, side="left"), 1, self.tmesh.M) - 1
        if np.ndim(m) == 0:
            return np.interp(x, self.smesh.nodes, self.nodal()[int(m)])
        m, x = np.broadcast_arrays(m, x)
        sm = self.smesh
        e = np.clip(np.searchsorted(sm.nodes, x, side="right") - 1, 0, sm.N - 1)
        s = (x - sm.nodes[e]) / sm.h[e]
        vals = self.nodal()
        return (1.0 - s) * vals[m, e] + s * vals[m, e + 1]

    def __add__(self, other):
        _check_same(self, other)
        return self.replace(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same(self, other)
        return self.replace(self.coeffs - other.coeffs)

    def __mul__(self, s):
        return self.replace(self.coeffs * float(s))

    __rmul__ = __mul__


def _check_same(u: SpaceTimeField, v: SpaceTimeField):
    if u.kind != v.kind or u.coeffs.shape != v.coeffs.shape:
        raise ValueError("fields live on different spaces")
    if not (np.array_equal(u.tmesh.points, v.tmesh.points) and np.array_equal(u.smesh.nodes, v.smesh.nodes)):
        raise ValueError("fields live on different meshes")


def jump(u: SpaceTimeField, m: int) -> np.ndarray:
    """[u]_m = u_{m+1} - u_m for m >= 1 and u_1 - 0 at t_0."""
    if not 0 <= m < u.tmesh.M:
        raise IndexError(f"jump index {m} outside 0..{u.tmesh.M - 1}")
    c = u.coeffs
    return c[0].copy() if m == 0 else c[m] - c[m - 1]


def jumps(u: SpaceTimeField) -> np.ndarray:
    """All jumps [u]_0..[u]_{M-1} stacked row-wise."""
    return np.diff(u.coeffs, axis=0, prepend=0.0)


class LiftedControl:
    """Continuous piecewise-linear-in-time lift of a dG(0) field, zero at t = 0."""

    def __init__(self, u: SpaceTimeField):
        self.field = u
        self._knots = np.vstack([np.zeros(u.coeffs.shape[1]), u.coeffs])

    def __call__(self, t: float) -> np.ndarray:
        pts = self.field.tmesh.points
        if t <= 0.0:
            return np.zeros(self._knots.shape[1])
        m = int(np.clip(np.searchsorted(pts, t, side="left"), 1, self.field.tmesh.M))
        s = (t - pts[m - 1]) / (pts[m] - pts[m - 1])
        # knot m-1 is u_{m-1} (u_0 := 0), so this is u_{m-1} + s [u]_{m-1}
        return (1.0 - s) * self._knots[m - 1] + s * self._knots[m]

    def time_derivative(self, t: float) -> np.ndarray:
        pts = self.field.tmesh.points
        m = int(np.clip(np.searchsorted(pts, t, side="left"), 1, self.field.tmesh.M))
        return (self._knots[m] - self._knots[m - 1]) / (pts[m] - pts[m - 1])


def lift_control(u: SpaceTimeField) -> LiftedControl:
    return LiftedControl(u)
