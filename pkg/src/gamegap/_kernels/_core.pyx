# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Euler-Maruyama path loop and 1-d quantile merge.

Same contracts as gamegap._kernels._fallback; the Python wrappers there
document the semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, pow
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def em_simulate(double[:, :, ::1] gain, double[:, ::1] offset,
                double[:, ::1] x0, double[:, :, ::1] noise, double dt):
    cdef Py_ssize_t steps = gain.shape[0]
    cdef Py_ssize_t n = gain.shape[1]
    cdef Py_ssize_t m = x0.shape[0]
    out_arr = np.empty((steps + 1, m, n), dtype=np.float64)
    drift_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] drift = drift_arr
    cdef Py_ssize_t i, j, k
    cdef double one = 1.0, zero = 0.0
    cdef char ta = b'T', tb = b'N'
    cdef int bm, bn, bk

    for i in range(m):
        for j in range(n):
            out[0, i, j] = x0[i, j]

    bm = <int> n   # rows of op(A) in column-major terms
    bn = <int> m
    bk = <int> n
    for k in range(steps):
        # drift = X_k @ gain_k^T, computed as the column-major identity
        # drift^T = gain_k @ X_k^T (row-major buffers reinterpreted).
        dgemm(&ta, &tb, &bm, &bn, &bk, &one,
              &gain[k, 0, 0], &bk,
              &out[k, 0, 0], &bk,
              &zero, &drift[0, 0], &bm)
        for i in range(m):
            for j in range(n):
                out[k + 1, i, j] = (out[k, i, j]
                                    - (drift[i, j] + offset[k, j]) * dt
                                    + noise[k, i, j])
    return out_arr


def w1d_pow_sum(double[::1] xa, double[::1] wa,
                double[::1] xb, double[::1] wb, double r):
    cdef Py_ssize_t ka = xa.shape[0], kb = xb.shape[0]
    cdef Py_ssize_t ia = 0, ib = 0
    cdef double rema = wa[0], remb = wb[0]
    cdef double acc = 0.0, take, diff
    while True:
        take = rema if rema < remb else remb
        diff = fabs(xa[ia] - xb[ib])
        if r == 1.0:
            acc += take * diff
        elif r == 2.0:
            acc += take * diff * diff
        else:
            acc += take * pow(diff, r)
        rema -= take
        remb -= take
        if rema <= 0.0:
            ia += 1
            if ia >= ka:
                break
            rema = wa[ia]
        if remb <= 0.0:
            ib += 1
            if ib >= kb:
                break
            remb = wb[ib]
    return acc
