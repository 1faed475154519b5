"""Pure numpy/scipy versions of the compiled slab kernels (same signatures)."""

import numpy as np

from .discretization import tridiag_matvec, tridiag_solve


def _smax(w, eps):
    if eps == 0.0:
        return np.maximum(w, 0.0)
    mid = np.clip(w, 0.0, eps)
    poly = mid**3 * (1.0 / eps**2 - mid / (2.0 * eps**3))
    return np.where(w >= eps, w - 0.5 * eps, np.where(w > 0.0, poly, 0.0))


def _elliptic(m_diag, m_off, a_diag, a_off, load, d, beta, phi):
    phi[0] = phi[-1] = 0.0
    phi[1:-1] = tridiag_solve(a_diag, a_off, beta * tridiag_matvec(m_diag, m_off, d)[1:-1] + load)


def fixed_point_slab(m_diag, m_off, lump, a_diag, a_off, h, xi, wq, load, d_prev,
                     beta, r, c, eps, lumped, tol, maxit, phi_out, d_out):
    d_prev = np.asarray(d_prev)
    xi = np.asarray(xi)
    hw = c * np.outer(h, wq)
    mdprev = tridiag_matvec(m_diag, m_off, d_prev)
    d = d_prev.copy()
    converged = False
    it = 0
    while it < maxit:
        it += 1
        _elliptic(m_diag, m_off, a_diag, a_off, load, d, beta, phi_out)
        if lumped:
            dnew = d_prev + c * _smax(-beta * (d - phi_out) - r, eps)
            diff = dnew - d
            nrm = np.dot(lump * diff, diff)
        else:
            g = d - phi_out
            wq_vals = -beta * (g[:-1, None] * (1.0 - xi) + g[1:, None] * xi) - r
            val = hw * _smax(wq_vals, eps)
            rhs = mdprev.copy()
            rhs[:-1] += val @ (1.0 - xi)
            rhs[1:] += val @ xi
            dnew = tridiag_solve(m_diag, m_off, rhs)
            diff = dnew - d
            nrm = np.dot(diff, tridiag_matvec(m_diag, m_off, diff))
        d = dnew
        if nrm <= tol * tol:
            converged = True
            break
    _elliptic(m_diag, m_off, a_diag, a_off, load, d, beta, phi_out)
    d_out[:] = d
    return it if converged else -it


def closed_form_slab(m_diag, m_off, lump, a_diag, a_off, load, d_prev, beta, r, c,
                     tol, maxit, phi_out, d_out):
    d_prev = np.asarray(d_prev)
    d = d_prev.copy()
    cb = c * beta
    converged = False
    it = 0
    while it < maxit:
        it += 1
        _elliptic(m_diag, m_off, a_diag, a_off, load, d, beta, phi_out)
        omega = -beta * (d_prev - phi_out) - r
        dnew = np.where(omega <= 0.0, d_prev, (d_prev + cb * phi_out - c * r) / (1.0 + cb))
        diff = dnew - d
        d = dnew
        if np.dot(lump * diff, diff) <= tol * tol:
            converged = True
            break
    _elliptic(m_diag, m_off, a_diag, a_off, load, d, beta, phi_out)
    d_out[:] = d
    return it if converged else -it
