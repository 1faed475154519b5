"""The max(., 0) Nemytskii operator and its C^1 polynomial smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import ModelParams, SpatialMesh1D, QuadratureConfig, eval_at_quadrature


def max_plus(x):
    return np.maximum(x, 0.0)


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"smoothing width must be > 0, got {eps}")


def max_eps(x, eps: float):
    """0 for x <= 0, -x^4/(2 eps^3) + x^3/eps^2 on (0, eps), x - eps/2 beyond."""
    _check_eps(eps)
    x = np.asarray(x, dtype=float)
    mid = np.clip(x, 0.0, eps)
    poly = mid**3 * (1.0 / eps**2 - mid / (2.0 * eps**3))
    val = np.where(x >= eps, x - 0.5 * eps, np.where(x > 0.0, poly, 0.0))
    # round up by an ulp where rounding pushed max(x) - max_eps(x) past eps/2,
    # so the gap bound holds in floating point, not just in exact arithmetic
    pos = np.maximum(x, 0.0)
    bad = pos - val > 0.5 * eps
    while np.any(bad):
        val = np.where(bad, np.nextafter(val, np.inf), val)
        bad = pos - val > 0.5 * eps
    return val


def max_eps_prime(x, eps: float):
    _check_eps(eps)
    x = np.asarray(x, dtype=float)
    s = np.clip(x, 0.0, eps) / eps
    return np.where(x >= eps, 1.0, np.where(x > 0.0, s * s * (3.0 - 2.0 * s), 0.0))


@dataclass(frozen=True)
class RegularizationConfig:
    """epsilon = 0 selects the exact max; epsilon > 0 the smoothed version."""

    epsilon: float = 0.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def exact(self) -> bool:
        return self.epsilon == 0.0

    def apply(self, x):
        return max_plus(x) if self.exact else max_eps(x, self.epsilon)

    def derivative(self, x):
        # the exact max gets the active-set indicator as its (Newton) derivative
        if self.exact:
            return (np.asarray(x) > 0.0).astype(float)
        return max_eps_prime(x, self.epsilon)


def driver(phi, d, params: ModelParams):
    """w = -beta (d - phi) - r, elementwise."""
    return -params.beta * (np.asarray(d) - np.asarray(phi)) - params.r


def driver_at_quadrature(phi_slab, d_slab, params: ModelParams, mesh: SpatialMesh1D,
                         quad: QuadratureConfig = QuadratureConfig(),
                         variant: RegularizationConfig = RegularizationConfig()):
    """max-variant of the driver at element Gauss points, shape (N, q_space)."""
    phi_slab = np.asarray(phi_slab, dtype=float)
    d_slab = np.asarray(d_slab, dtype=float)
    if d_slab.shape[-1] != mesh.N + 1:
        raise ValueError("d must carry values at all nodes")
    phi_q = eval_at_quadrature(phi_slab, mesh, quad.q_space)
    d_q = eval_at_quadrature(d_slab, mesh, quad.q_space)
    return variant.apply(driver(phi_q, d_q, params))
