# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled ordered exponential product for fiber dims 1 and 2.

Same contract as folirec._transport_py.ordered_exp_product; larger fiber
dims stay on the numpy/scipy path.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, cosh, exp, sin, sinh, sqrt

cnp.import_array()

DEF SERIES_CUTOFF = 1e-8


cdef inline void _expm2(double a00, double a01, double a10, double a11,
                        double* e) nogil:
    # Closed-form 2x2 matrix exponential, series-stabilized near s2 = 0.
    cdef double mu = 0.5 * (a00 + a11)
    cdef double b00 = a00 - mu
    cdef double s2 = b00 * b00 + a01 * a10
    cdef double c, sc, s, w, scale
    if s2 > SERIES_CUTOFF:
        s = sqrt(s2)
        c = cosh(s)
        sc = sinh(s) / s
    elif s2 < -SERIES_CUTOFF:
        w = sqrt(-s2)
        c = cos(w)
        sc = sin(w) / w
    else:
        c = 1.0 + s2 / 2.0 + s2 * s2 / 24.0
        sc = 1.0 + s2 / 6.0 + s2 * s2 / 120.0
    scale = exp(mu)
    e[0] = scale * (c + sc * b00)
    e[1] = scale * (sc * a01)
    e[2] = scale * (sc * a10)
    e[3] = scale * (c - sc * b00)


def ordered_exp_product(double[:, :, ::1] omegas, double[::1] dts):
    """P = E_n ... E_1 with E_i = expm(-omegas[i] * dts[i])."""
    cdef Py_ssize_t n = omegas.shape[0]
    cdef Py_ssize_t k = omegas.shape[1]
    cdef Py_ssize_t i
    cdef double acc, dt
    cdef double e[4]
    cdef double p00, p01, p10, p11, q00, q01, q10, q11

    if k == 1:
        acc = 1.0
        for i in range(n):
            acc *= exp(-omegas[i, 0, 0] * dts[i])
        return np.array([[acc]])

    if k == 2:
        p00 = 1.0
        p01 = 0.0
        p10 = 0.0
        p11 = 1.0
        with nogil:
            for i in range(n):
                dt = dts[i]
                _expm2(-omegas[i, 0, 0] * dt, -omegas[i, 0, 1] * dt,
                       -omegas[i, 1, 0] * dt, -omegas[i, 1, 1] * dt, e)
                q00 = e[0] * p00 + e[1] * p10
                q01 = e[0] * p01 + e[1] * p11
                q10 = e[2] * p00 + e[3] * p10
                q11 = e[2] * p01 + e[3] * p11
                p00 = q00
                p01 = q01
                p10 = q10
                p11 = q11
        return np.array([[p00, p01], [p10, p11]])

    raise NotImplementedError("compiled kernel covers fiber dims 1 and 2")
