# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same packed-parameter layout and signatures as ``_pykernels``; see that
module for the contract of each function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, sqrt, pow, isfinite, INFINITY

cnp.import_array()

DEF LOSS_EXP = 0
DEF LOSS_LOG = 1

STATUS_OK = 0
STATUS_FLOOR = 1
STATUS_NONFINITE = 2
STATUS_CRITICAL = 3


cdef inline void _loss(double m, int code, double* val, double* der) noexcept nogil:
    cdef double e
    if code == LOSS_EXP:
        e = exp(-m)
        val[0] = e
        der[0] = -e
    else:
        if m >= 0:
            e = exp(-m)
            val[0] = log1p(e)
            der[0] = -e / (1.0 + e)
        else:
            e = exp(m)
            val[0] = -m + log1p(e)
            der[0] = -1.0 / (1.0 + e)


cdef double _risk_grad(
    const double[::1] theta,
    const Py_ssize_t[::1] dims,
    const Py_ssize_t[::1] woff,
    const Py_ssize_t[::1] voff,
    const double[:, ::1] z,
    int code,
    double[::1] grad,
    double[::1] suffix,
    double[::1] q,
    double[::1] q2,
) noexcept nogil:
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t d0 = dims[0]
    cdef Py_ssize_t k, i, j, rows, cols, so, sp
    cdef double s, m, val, der, total = 0.0

    # suffix block k (offset voff[k], length d_k) holds W_L ... W_{k+1}
    suffix[voff[L]] = 1.0
    for k in range(L, 0, -1):
        rows = dims[k]
        cols = dims[k - 1]
        so = voff[k]
        sp = voff[k - 1]
        for j in range(cols):
            s = 0.0
            for i in range(rows):
                s += suffix[so + i] * theta[woff[k - 1] + i * cols + j]
            suffix[sp + j] = s

    for j in range(d0):
        q[j] = 0.0
    for i in range(n):
        m = 0.0
        for j in range(d0):
            m += z[i, j] * suffix[j]
        _loss(m, code, &val, &der)
        total += val
        for j in range(d0):
            q[j] += der * z[i, j]
    for j in range(d0):
        q[j] /= n

    for k in range(1, L + 1):
        rows = dims[k]
        cols = dims[k - 1]
        so = voff[k]
        for i in range(rows):
            for j in range(cols):
                grad[woff[k - 1] + i * cols + j] = suffix[so + i] * q[j]
        if k < L:
            for i in range(rows):
                s = 0.0
                for j in range(cols):
                    s += theta[woff[k - 1] + i * cols + j] * q[j]
                q2[i] = s
            for i in range(rows):
                q[i] = q2[i]
    return total / n


cdef tuple _layout(dims_in):
    cdef Py_ssize_t L = len(dims_in) - 1
    dims = np.ascontiguousarray(dims_in, dtype=np.intp)
    woff = np.zeros(L + 1, dtype=np.intp)
    voff = np.zeros(L + 1, dtype=np.intp)
    cdef Py_ssize_t k
    for k in range(1, L + 1):
        woff[k] = woff[k - 1] + dims[k] * dims[k - 1]
        voff[k] = voff[k - 1] + dims[k - 1]
    width = int(max(dims))
    return dims, woff, voff, width, int(voff[L] + 1)


def risk_grad(theta, dims, z, int loss_code, grad_out):
    if loss_code not in (LOSS_EXP, LOSS_LOG):
        raise ValueError(f"unknown loss code {loss_code}")
    dims_a, woff, voff, width, slen = _layout(dims)
    suffix = np.empty(slen)
    q = np.empty(width)
    q2 = np.empty(width)
    return _risk_grad(theta, dims_a, woff, voff, np.ascontiguousarray(z, dtype=np.float64),
                      loss_code, grad_out, suffix, q, q2)


cpdef double smoothness(int depth, double radius, double beta, double g) noexcept nogil:
    return 2.0 * depth * depth * pow(radius, 2 * depth - 2) * (beta + g)


def gd_advance(
    double[::1] theta,
    dims,
    z,
    int loss_code,
    double beta,
    double g,
    double radius,
    long max_steps,
    double risk_floor,
    const double[::1] sq0,
    double fixed_eta=0.0,
):
    if loss_code not in (LOSS_EXP, LOSS_LOG):
        raise ValueError(f"unknown loss code {loss_code}")
    dims_a, woff_a, voff_a, width, slen = _layout(dims)
    cdef const Py_ssize_t[::1] dv = dims_a
    cdef const Py_ssize_t[::1] woff = woff_a
    cdef const Py_ssize_t[::1] voff = voff_a
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t L = dv.shape[0] - 1
    cdef Py_ssize_t P = theta.shape[0]
    cdef double[::1] grad = np.empty(P)
    cdef double[::1] suffix = np.empty(slen)
    cdef double[::1] q = np.empty(width)
    cdef double[::1] q2 = np.empty(width)
    cdef double[::1] sq = np.empty(L)

    cdef double cur, new, gsq, eta, sum0 = 0.0, sum1 = 0.0, sum2 = 0.0
    cdef double max_inc = -INFINITY, max_drift = 0.0, top, lo, hi, sh, s
    cdef long steps = 0
    cdef int status = 0
    cdef Py_ssize_t i, k

    with nogil:
        cur = _risk_grad(theta, dv, woff, voff, zz, loss_code, grad, suffix, q, q2)
        gsq = 0.0
        for i in range(P):
            gsq += grad[i] * grad[i]
        if not (isfinite(cur) and isfinite(gsq)):
            status = 2
        while status == 0:
            if cur <= risk_floor:
                status = 1
                break
            if steps >= max_steps:
                break
            if gsq == 0.0:
                status = 3
                break
            if fixed_eta > 0:
                eta = fixed_eta
            else:
                eta = 1.0 / smoothness(<int>L, radius, beta, g)
                if eta > 1.0:
                    eta = 1.0
            for i in range(P):
                theta[i] -= eta * grad[i]
            sum0 += eta
            sum1 += eta * gsq
            sum2 += eta * eta * gsq
            top = 0.0
            for k in range(L):
                s = 0.0
                for i in range(woff[k], woff[k + 1]):
                    s += theta[i] * theta[i]
                sq[k] = s
                if s > top:
                    top = s
            if fixed_eta <= 0:
                top = sqrt(top)
                while top > radius - 1.0:
                    radius += 1.0
            lo = INFINITY
            hi = -INFINITY
            for k in range(L):
                sh = sq[k] - sq0[k]
                if sh < lo:
                    lo = sh
                if sh > hi:
                    hi = sh
            if hi - lo > max_drift:
                max_drift = hi - lo
            new = _risk_grad(theta, dv, woff, voff, zz, loss_code, grad, suffix, q, q2)
            gsq = 0.0
            for i in range(P):
                gsq += grad[i] * grad[i]
            steps += 1
            if not (isfinite(new) and isfinite(gsq)):
                cur = new
                status = 2
                break
            if new - cur > max_inc:
                max_inc = new - cur
            cur = new
        if fixed_eta > 0:
            eta = fixed_eta
        else:
            eta = 1.0 / smoothness(<int>L, radius, beta, g)
            if eta > 1.0:
                eta = 1.0
    return steps, cur, gsq, radius, eta, sum1, sum2, max_inc, max_drift, status, sum0
