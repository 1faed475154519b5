# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-slab fixed-point kernels.

Vectors indexed over all nodes (length n = N + 1); the elliptic operator acts on
the N - 1 interior nodes. ``phi_out`` carries zeros at the two boundary nodes.
"""

from libc.math cimport sqrt
from cpython.mem cimport PyMem_Malloc, PyMem_Free

ctypedef double[::1] dvec


cdef inline double _smax(double x, double eps) noexcept nogil:
    if x <= 0.0:
        return 0.0
    if eps == 0.0 or x >= eps:
        return x - 0.5 * eps
    return x * x * x * (1.0 / (eps * eps) - x / (2.0 * eps * eps * eps))


cdef void _thomas(const double* diag, const double* off, double* rhs, double* work,
                  Py_ssize_t n) noexcept nogil:
    # symmetric tridiagonal, solved in place in rhs
    cdef Py_ssize_t i
    cdef double denom
    work[0] = off[0] / diag[0] if n > 1 else 0.0
    rhs[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - off[i - 1] * work[i - 1]
        if i < n - 1:
            work[i] = off[i] / denom
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        rhs[i] -= work[i] * rhs[i + 1]


cdef void _matvec(const double* diag, const double* off, const double* v, double* out,
                  Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = diag[i] * v[i]
    for i in range(n - 1):
        out[i] += off[i] * v[i + 1]
        out[i + 1] += off[i] * v[i]


cdef void _elliptic(const double* m_diag, const double* m_off, const double* a_diag,
                    const double* a_off, const double* load, const double* d, double beta,
                    double* phi, double* tmp, double* work, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    _matvec(m_diag, m_off, d, tmp, n)
    phi[0] = 0.0
    phi[n - 1] = 0.0
    for i in range(1, n - 1):
        phi[i] = beta * tmp[i] + load[i - 1]
    _thomas(a_diag, a_off, phi + 1, work, n - 2)


cdef double _mnorm2(const double* m_diag, const double* m_off, const double* v,
                    double* tmp, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    _matvec(m_diag, m_off, v, tmp, n)
    for i in range(n):
        s += v[i] * tmp[i]
    return s


def fixed_point_slab(dvec m_diag, dvec m_off, dvec lump, dvec a_diag, dvec a_off,
                     dvec h, dvec xi, dvec wq, dvec load, dvec d_prev,
                     double beta, double r, double c, double eps, bint lumped,
                     double tol, int maxit, dvec phi_out, dvec d_out):
    """Picard iteration for one slab; returns iterations, negated if not converged."""
    cdef Py_ssize_t n = d_prev.shape[0], ne = n - 1, q = xi.shape[0]
    cdef Py_ssize_t i, e, k
    cdef int it
    cdef double w, val, nrm, dl, dr, pl, pr, x
    cdef double tol2 = tol * tol
    cdef bint converged = False
    cdef double* buf = <double*> PyMem_Malloc(6 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* d = buf
    cdef double* dnew = buf + n
    cdef double* mdprev = buf + 2 * n
    cdef double* tmp = buf + 3 * n
    cdef double* work = buf + 4 * n
    cdef double* diff = buf + 5 * n
    cdef double* phi = &phi_out[0]
    cdef const double* md = &m_diag[0]
    cdef const double* mo = &m_off[0]
    try:
        with nogil:
            for i in range(n):
                d[i] = d_prev[i]
            _matvec(md, mo, &d_prev[0], mdprev, n)
            it = 0
            while it < maxit:
                it += 1
                _elliptic(md, mo, &a_diag[0], &a_off[0], &load[0], d, beta, phi, tmp, work, n)
                if lumped:
                    nrm = 0.0
                    for i in range(n):
                        w = -beta * (d[i] - phi[i]) - r
                        dnew[i] = d_prev[i] + c * _smax(w, eps)
                        diff[i] = dnew[i] - d[i]
                        nrm += lump[i] * diff[i] * diff[i]
                else:
                    for i in range(n):
                        dnew[i] = mdprev[i]
                    for e in range(ne):
                        dl = d[e]
                        dr = d[e + 1]
                        pl = phi[e]
                        pr = phi[e + 1]
                        for k in range(q):
                            x = xi[k]
                            w = -beta * ((dl - pl) * (1.0 - x) + (dr - pr) * x) - r
                            val = c * h[e] * wq[k] * _smax(w, eps)
                            dnew[e] += val * (1.0 - x)
                            dnew[e + 1] += val * x
                    _thomas(md, mo, dnew, work, n)
                    for i in range(n):
                        diff[i] = dnew[i] - d[i]
                    nrm = _mnorm2(md, mo, diff, tmp, n)
                for i in range(n):
                    d[i] = dnew[i]
                if nrm <= tol2:
                    converged = True
                    break
            _elliptic(md, mo, &a_diag[0], &a_off[0], &load[0], d, beta, phi, tmp, work, n)
            for i in range(n):
                d_out[i] = d[i]
    finally:
        PyMem_Free(buf)
    return it if converged else -it


def closed_form_slab(dvec m_diag, dvec m_off, dvec lump, dvec a_diag, dvec a_off,
                     dvec load, dvec d_prev, double beta, double r, double c,
                     double tol, int maxit, dvec phi_out, dvec d_out):
    """Outer iteration over phi with the nodal closed-form d update (lumped, exact max)."""
    cdef Py_ssize_t n = d_prev.shape[0], i
    cdef int it
    cdef double omega, dn, nrm
    cdef double tol2 = tol * tol
    cdef double cb = c * beta
    cdef bint converged = False
    cdef double* buf = <double*> PyMem_Malloc(3 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* d = buf
    cdef double* tmp = buf + n
    cdef double* work = buf + 2 * n
    cdef double* phi = &phi_out[0]
    try:
        with nogil:
            for i in range(n):
                d[i] = d_prev[i]
            it = 0
            while it < maxit:
                it += 1
                _elliptic(&m_diag[0], &m_off[0], &a_diag[0], &a_off[0], &load[0], d, beta,
                          phi, tmp, work, n)
                nrm = 0.0
                for i in range(n):
                    omega = -beta * (d_prev[i] - phi[i]) - r
                    if omega <= 0.0:
                        dn = d_prev[i]
                    else:
                        dn = (d_prev[i] + cb * phi[i] - c * r) / (1.0 + cb)
                    nrm += lump[i] * (dn - d[i]) * (dn - d[i])
                    d[i] = dn
                if nrm <= tol2:
                    converged = True
                    break
            _elliptic(&m_diag[0], &m_off[0], &a_diag[0], &a_off[0], &load[0], d, beta,
                      phi, tmp, work, n)
            for i in range(n):
                d_out[i] = d[i]
    finally:
        PyMem_Free(buf)
    return it if converged else -it
