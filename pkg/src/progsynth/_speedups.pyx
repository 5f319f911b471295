# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the hot kernels in _kernels_py.

Same flattened program / parameter conventions; scalar inner loops instead
of whole-matrix temporaries, which is what makes small-n MCMC steps cheap.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sin, fabs, tanh, lgamma, isnan, INFINITY

cnp.import_array()

cdef double PI = 3.141592653589793
cdef double LOG_2PI = 1.8378770664093453


def gp_cov(long[::1] codes, double[::1] p0, double[::1] p1,
           double[::1] x1, double[::1] x2):
    cdef Py_ssize_t n = x1.shape[0]
    cdef Py_ssize_t m = x2.shape[0]
    cdef Py_ssize_t nops = codes.shape[0]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    stack_arr = np.empty(nops + 1, dtype=np.float64)
    cdef double[::1] stack = stack_arr
    cdef Py_ssize_t i, j, k, sp
    cdef long code
    cdef double a, b, xi, xj, d, s, d1, d2
    for i in range(n):
        xi = x1[i]
        for j in range(m):
            xj = x2[j]
            sp = 0
            for k in range(nops):
                code = codes[k]
                a = p0[k]
                b = p1[k]
                if code == 0:      # const
                    stack[sp] = a; sp += 1
                elif code == 1:    # white noise
                    stack[sp] = a if xi == xj else 0.0; sp += 1
                elif code == 2:    # linear
                    stack[sp] = (xi - a) * (xj - a); sp += 1
                elif code == 3:    # squared exponential
                    d = xi - xj
                    stack[sp] = exp(-(d * d) / a); sp += 1
                elif code == 4:    # periodic
                    s = sin((2.0 * PI / b) * fabs(xi - xj))
                    stack[sp] = exp((-2.0 / a) * (s * s)); sp += 1
                elif code == 5:    # sum
                    sp -= 1
                    stack[sp - 1] = stack[sp - 1] + stack[sp]
                elif code == 6:    # product
                    sp -= 1
                    stack[sp - 1] = stack[sp - 1] * stack[sp]
                else:              # change point
                    d1 = 0.5 * (1.0 + tanh(10.0 * (xi - a)))
                    d2 = 0.5 * (1.0 + tanh(10.0 * (xj - a)))
                    sp -= 1
                    stack[sp - 1] = (d1 * d2 * stack[sp - 1]
                                     + (1.0 - d1) * (1.0 - d2) * stack[sp])
            out[i, j] = stack[0]
    return out_arr


def block_row_logliks(double[:, ::1] values, long[::1] kinds,
                      double[:, :, ::1] params, double[::1] log_weights):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t l = values.shape[1]
    cdef Py_ssize_t t = params.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, i, j
    cdef double acc, x, mean, sd, z, rate, top, total
    work_arr = np.empty(t, dtype=np.float64)
    cdef double[::1] work = work_arr
    cdef long kind
    for r in range(n):
        for j in range(t):
            acc = log_weights[j]
            for i in range(l):
                x = values[r, i]
                if isnan(x):
                    continue
                kind = kinds[i]
                if kind == 0:
                    mean = params[j, i, 0]
                    sd = params[j, i, 1]
                    z = (x - mean) / sd
                    acc += -0.5 * (z * z) - log(sd) - 0.5 * LOG_2PI
                elif kind == 1:
                    rate = params[j, i, 0]
                    acc += x * log(rate) - rate - lgamma(x + 1.0)
                else:
                    acc += log(params[j, i, <Py_ssize_t>x - 1])
            work[j] = acc
        top = -INFINITY
        for j in range(t):
            if work[j] > top:
                top = work[j]
        if top == -INFINITY:
            out[r] = top
            continue
        total = 0.0
        for j in range(t):
            total += exp(work[j] - top)
        out[r] = top + log(total)
    return out_arr
