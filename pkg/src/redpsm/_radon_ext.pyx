# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled strip-integral projector kernels (see ``_radon_py`` for geometry)."""

from functools import lru_cache

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, floor

cnp.import_array()

cdef double _THIN = 1e-7


cdef inline double _r2(double u) nogil:
    if u <= 0.0:
        return 0.0
    return 0.5 * u * u


cdef inline double _cdf(double x, double a, double b, double h1, double h2) nogil:
    cdef double v
    if b < _THIN:
        v = x / a + 0.5
        if v < 0.0:
            return 0.0
        if v > 1.0:
            return 1.0
        return v
    return (_r2(x + h1) - _r2(x + h2) - _r2(x - h2) + _r2(x - h1)) / (a * b)


cdef inline double _edge(double x, double a, double b, double h1, double h2) nogil:
    if x <= -h1:
        return 0.0
    if x >= h1:
        return 1.0
    return _cdf(x, a, b, h1, h2)


cdef inline void _weights3(double u, Py_ssize_t jc, double a, double b,
                           double h1, double h2, double* w) nogil:
    # bins jc-1, jc, jc+1 share their four edges
    cdef double e0 = _edge(jc - 1.5 - u, a, b, h1, h2)
    cdef double e1 = _edge(jc - 0.5 - u, a, b, h1, h2)
    cdef double e2 = _edge(jc + 0.5 - u, a, b, h1, h2)
    cdef double e3 = _edge(jc + 1.5 - u, a, b, h1, h2)
    w[0] = e1 - e0
    w[1] = e2 - e1
    w[2] = e3 - e2


cdef void _fill_table(Py_ssize_t n, double theta, long long[:] jc0, double[:, :] w) nogil:
    cdef Py_ssize_t r, c, i, k, jc
    cdef double ct = cos(theta), st = sin(theta)
    cdef double a = fabs(ct), b = fabs(st), tmp
    cdef double half = 0.5 * (n - 1)
    cdef double h1, h2, u
    cdef double ww[3]
    if a < b:
        tmp = a
        a = b
        b = tmp
    h1 = 0.5 * (a + b)
    h2 = 0.5 * (a - b)
    for r in range(n):
        for c in range(n):
            i = r * n + c
            u = (c - half) * ct + (half - r) * st + half
            jc = <Py_ssize_t>floor(u + 0.5)
            _weights3(u, jc, a, b, h1, h2, ww)
            jc0[i] = jc - 1
            for k in range(3):
                if jc - 1 + k >= 0 and jc - 1 + k < n:
                    w[i, k] = ww[k]
                else:
                    w[i, k] = 0.0


@lru_cache(maxsize=1024)
def _table(Py_ssize_t n, double theta):
    jc0 = np.empty(n * n, dtype=np.int64)
    w = np.empty((n * n, 3))
    cdef long long[:] jv = jc0
    cdef double[:, :] wv = w
    with nogil:
        _fill_table(n, theta, jv, wv)
    return jc0, w


cdef void _forward_one(const double[:] img, const long long[:] jc0, const double[:, :] w,
                       double[:] out) nogil:
    cdef Py_ssize_t n = out.shape[0], i, k, j
    cdef double v
    for j in range(n):
        out[j] = 0.0
    for i in range(img.shape[0]):
        v = img[i]
        if v == 0.0:
            continue
        for k in range(3):
            j = jc0[i] + k
            if j >= 0 and j < n:
                out[j] += v * w[i, k]


cdef void _adjoint_one(const double[:] g, const long long[:] jc0, const double[:, :] w,
                       double[:] out) nogil:
    cdef Py_ssize_t n = g.shape[0], i, k, j
    cdef double acc
    for i in range(out.shape[0]):
        acc = 0.0
        for k in range(3):
            j = jc0[i] + k
            if j >= 0 and j < n:
                acc += g[j] * w[i, k]
        out[i] = acc


def forward(images, angles):
    """Project a stack ``(p, n, n)`` at ``angles`` (length p) to ``(p, n)``."""
    imgs = np.ascontiguousarray(images, dtype=np.float64)
    cdef Py_ssize_t p = imgs.shape[0], n = imgs.shape[1], t
    cdef const double[:, :] flat = imgs.reshape(p, n * n)
    cdef const long long[:] jv
    cdef const double[:, :] wv
    out = np.zeros((p, n))
    cdef double[:, :] o = out
    for t in range(p):
        jv, wv = _table(n, float(angles[t]))
        with nogil:
            _forward_one(flat[t], jv, wv, o[t])
    return out


def adjoint(sino, angles, Py_ssize_t n):
    """Exact transpose of :func:`forward`; ``(p, n)`` to ``(p, n, n)``."""
    cdef const double[:, :] g = np.ascontiguousarray(sino, dtype=np.float64)
    cdef Py_ssize_t p = g.shape[0], t
    cdef const long long[:] jv
    cdef const double[:, :] wv
    out = np.zeros((p, n * n))
    cdef double[:, :] o = out
    for t in range(p):
        jv, wv = _table(n, float(angles[t]))
        with nogil:
            _adjoint_one(g[t], jv, wv, o[t])
    return out.reshape(p, n, n)
