# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence; same contract as ``_lstm_py``.

Arrays must be C-contiguous.  ``w_rec`` is (H, 4H) row-major, which BLAS sees
as its (4H, H) column-major transpose, so ``h @ w_rec`` is a plain gemv.
"""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemv, sgemv

ctypedef fused real:
    float
    double


cdef inline real _sig(real x) noexcept nogil:
    cdef double e
    if x >= 0:
        e = exp(-<double>x)
        return <real>(1.0 / (1.0 + e))
    e = exp(<double>x)
    return <real>(e / (1.0 + e))


cdef inline void _gemv(bint transpose, int m, int n, real* a, real* x, real beta, real* y) noexcept nogil:
    cdef char trans = 84 if transpose else 78  # 'T' / 'N'
    cdef int inc = 1
    cdef real one = 1.0
    if real is float:
        sgemv(&trans, &m, &n, &one, a, &m, x, &inc, &beta, y, &inc)
    else:
        dgemv(&trans, &m, &n, &one, a, &m, x, &inc, &beta, y, &inc)


def lstm_forward(real[:, ::1] xproj, real[:, ::1] w_rec, real[:, ::1] gates,
                 real[:, ::1] cells, real[:, ::1] hidden):
    cdef Py_ssize_t T = xproj.shape[0]
    cdef Py_ssize_t H = w_rec.shape[0]
    cdef int G = <int>(4 * H)
    cdef Py_ssize_t t, j
    cdef real i_, f_, g_, o_, c_prev, c
    cdef real one = 1
    with nogil:
        for t in range(T):
            for j in range(G):
                gates[t, j] = xproj[t, j]
            if t > 0:
                _gemv(False, G, <int>H, &w_rec[0, 0], &hidden[t - 1, 0], one, &gates[t, 0])
            for j in range(H):
                i_ = _sig(gates[t, j])
                f_ = _sig(gates[t, H + j])
                g_ = <real>tanh(gates[t, 2 * H + j])
                o_ = _sig(gates[t, 3 * H + j])
                c_prev = cells[t - 1, j] if t > 0 else 0
                c = f_ * c_prev + i_ * g_
                gates[t, j] = i_
                gates[t, H + j] = f_
                gates[t, 2 * H + j] = g_
                gates[t, 3 * H + j] = o_
                cells[t, j] = c
                hidden[t, j] = o_ * <real>tanh(c)


def lstm_backward(real[:, ::1] w_rec, real[:, ::1] gates, real[:, ::1] cells,
                  real[:, ::1] dhidden, real[:, ::1] dpre):
    cdef Py_ssize_t T = cells.shape[0]
    cdef Py_ssize_t H = cells.shape[1]
    cdef int G = <int>(4 * H)
    dtype = np.float32 if real is float else np.float64
    cdef real[::1] dh_next = np.zeros(H, dtype=dtype)
    cdef real[::1] dc_next = np.zeros(H, dtype=dtype)
    cdef Py_ssize_t t, j
    cdef real i_, f_, g_, o_, c_prev, tc, dh, dc
    cdef real zero = 0
    with nogil:
        for t in range(T - 1, -1, -1):
            for j in range(H):
                i_ = gates[t, j]
                f_ = gates[t, H + j]
                g_ = gates[t, 2 * H + j]
                o_ = gates[t, 3 * H + j]
                c_prev = cells[t - 1, j] if t > 0 else 0
                tc = <real>tanh(cells[t, j])
                dh = dhidden[t, j] + dh_next[j]
                dc = dh * o_ * (1 - tc * tc) + dc_next[j]
                dpre[t, j] = dc * g_ * i_ * (1 - i_)
                dpre[t, H + j] = dc * c_prev * f_ * (1 - f_)
                dpre[t, 2 * H + j] = dc * i_ * (1 - g_ * g_)
                dpre[t, 3 * H + j] = dh * tc * o_ * (1 - o_)
                dc_next[j] = dc * f_
            # dh_next = w_rec @ dpre[t]
            _gemv(True, G, <int>H, &w_rec[0, 0], &dpre[t, 0], zero, &dh_next[0])
