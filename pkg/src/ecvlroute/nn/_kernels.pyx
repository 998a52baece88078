# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the routing classifier's hot inner loops.

Fuses the elementwise/reduction chains (layernorm, softmax, BCE, Adam) that
the numpy fallback spells out with temporaries. Matrix products stay on BLAS
in both backends.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log1p, fabs, pow

cnp.import_array()


def layernorm_forward(double[:, ::1] x, double[::1] gamma, double[::1] beta,
                      double eps=1e-5):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    y_arr = np.empty((n, d), dtype=np.float64)
    mean_arr = np.empty(n, dtype=np.float64)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mu, var, xc, rs
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = mu
        rstd[i] = rs
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * rs * gamma[j] + beta[j]
    return y_arr, mean_arr, rstd_arr


def layernorm_backward(double[:, ::1] dy, double[:, ::1] x, double[::1] gamma,
                       double[::1] mean, double[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dx_arr = np.empty((n, d), dtype=np.float64)
    dgamma_arr = np.zeros(d, dtype=np.float64)
    dbeta_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double m1, m2, xhat, dxh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = rstd[i] * (dxh - m1 - xhat * m2)
    return dx_arr, dgamma_arr, dbeta_arr


def softmax_forward(double[:, ::1] s):
    cdef Py_ssize_t n = s.shape[0], d = s.shape[1], i, j
    p_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] p = p_arr
    cdef double mx, tot
    for i in range(n):
        mx = s[i, 0]
        for j in range(1, d):
            if s[i, j] > mx:
                mx = s[i, j]
        tot = 0.0
        for j in range(d):
            p[i, j] = exp(s[i, j] - mx)
            tot += p[i, j]
        for j in range(d):
            p[i, j] /= tot
    return p_arr


def softmax_backward(double[:, ::1] dp, double[:, ::1] p):
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], i, j
    ds_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] ds = ds_arr
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += dp[i, j] * p[i, j]
        for j in range(d):
            ds[i, j] = p[i, j] * (dp[i, j] - inner)
    return ds_arr


def relu_forward(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    y_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    for i in range(n):
        for j in range(d):
            y[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return y_arr


def relu_backward(double[:, ::1] dy, double[:, ::1] y):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    dx_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    for i in range(n):
        for j in range(d):
            dx[i, j] = dy[i, j] if y[i, j] > 0.0 else 0.0
    return dx_arr


def sigmoid_bce(double[::1] logits, double[::1] targets):
    cdef Py_ssize_t n = logits.shape[0], i
    dz_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] dz = dz_arr
    cdef double loss = 0.0, z, y, p
    for i in range(n):
        z = logits[i]
        y = targets[i]
        loss += (z if z > 0.0 else 0.0) - z * y + log1p(exp(-fabs(z)))
        p = 1.0 / (1.0 + exp(-z))
        dz[i] = (p - y) / n
    return loss / n, dz_arr


def adam_step(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t n = param.shape[0], i
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        param[i] -= lr * mhat / (sqrt(vhat) + eps)
