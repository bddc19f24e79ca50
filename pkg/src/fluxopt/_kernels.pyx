# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled face-wise proximal kernels (see ``_kernels_py`` for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, exp, log, copysign, fmin, fmax, floor

cnp.import_array()

cdef double NEWTON_RTOL = 1e-14
cdef int NEWTON_MAXITER = 100


cdef inline double _power(double x, double e, int ie) noexcept nogil:
    # ie >= 0: e is that small integer
    cdef double r = 1.0
    cdef int k
    if ie >= 0:
        for k in range(ie):
            r *= x
        return r
    if x == 0.0:
        return 0.0
    return exp(e * log(x))


cdef inline int _small_int(double e) noexcept:
    if e >= 0.0 and e <= 8.0 and floor(e) == e:
        return <int>e
    return -1


def prox_power(double[::1] v, double t, double a):
    # Newton runs in sweeps over all faces: one face's iterations form a
    # serial dependency chain, interleaving independent faces hides latency.
    cdef Py_ssize_t i, n = v.shape[0]
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    if a == 2.0:
        for i in range(n):
            out[i] = v[i] / (1.0 + t)
        return out_arr
    cdef bint above = a > 2.0
    # above: unknown u with u + t u^(a-1) = m
    # below: unknown s = u^(a-1) with s^b + t s = m, b = 1/(a-1)
    cdef double b = 1.0 / (a - 1.0)
    cdef double e = a - 2.0 if above else b - 1.0
    cdef double c = a - 1.0 if above else b
    cdef int ie = _small_int(e)
    x_arr = np.zeros(n)
    m_arr = np.empty(n)
    todo_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] x = x_arr
    cdef double[::1] m = m_arr
    cdef unsigned char[::1] todo = todo_arr
    cdef double p, g, dg, step
    cdef int sweep
    cdef Py_ssize_t left = 0
    with nogil:
        for i in range(n):
            m[i] = fabs(v[i])
            if m[i] == 0.0:
                continue
            todo[i] = 1
            left += 1
            if above:
                x[i] = fmin(m[i], exp(log(m[i] / t) / (a - 1.0)))
            else:
                x[i] = fmin(m[i] / t, exp(log(m[i]) * (a - 1.0)))
        for sweep in range(NEWTON_MAXITER):
            if left == 0:
                break
            left = 0
            for i in range(n):
                if not todo[i]:
                    continue
                p = _power(x[i], e, ie)
                if above:
                    g = x[i] + t * p * x[i] - m[i]
                    dg = 1.0 + t * c * p
                else:
                    g = p * x[i] + t * x[i] - m[i]
                    dg = c * p + t
                step = g / dg
                x[i] = fmax(x[i] - step, 0.0)
                if fabs(step) <= NEWTON_RTOL * x[i]:
                    todo[i] = 0
                else:
                    left += 1
        for i in range(n):
            if m[i] == 0.0:
                continue
            if above:
                out[i] = copysign(x[i], v[i])
            elif x[i] > 0.0:
                out[i] = copysign(exp(log(x[i]) * b), v[i])
    return out_arr


def l1_threshold(double[::1] u, double[::1] weights, double radius):
    """Weighted Michelot iteration: drop entries below the running threshold
    until the active set stops changing; finite and exact."""
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double total = 0.0, sw, swm, theta, prev
    for i in range(n):
        total += weights[i] * fabs(u[i])
    if total <= radius:
        return 0.0
    active_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] active = active_arr
    theta = -1.0
    while True:
        sw = 0.0
        swm = 0.0
        for i in range(n):
            if active[i]:
                sw += weights[i]
                swm += weights[i] * fabs(u[i])
        prev = theta
        theta = (swm - radius) / sw
        if theta == prev:
            break
        for i in range(n):
            if active[i] and fabs(u[i]) <= theta:
                active[i] = 0
    return theta


def prox_linf(double[::1] v, double t, double[::1] weights):
    cdef Py_ssize_t i, n = v.shape[0]
    u_arr = np.empty(n)
    cdef double[::1] u = u_arr
    for i in range(n):
        u[i] = v[i] / t
    cdef double theta = l1_threshold(u, weights, 1.0)
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double cap = t * theta
    if theta == 0.0:
        return out_arr
    for i in range(n):
        out[i] = fmin(fmax(v[i], -cap), cap)
    return out_arr
