# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled im2col/col2im for channels-last tensors (float32 and float64)."""

import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
            Py_ssize_t ho, Py_ssize_t wo, real[:, ::1] out):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    cdef Py_ssize_t b, i, j, ky, kx, ch, row, col
    with nogil:
        row = 0
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    col = 0
                    for ky in range(kh):
                        for kx in range(kw):
                            for ch in range(c):
                                out[row, col] = xp[b, i * stride + ky, j * stride + kx, ch]
                                col += 1
                    row += 1


def _col2im(real[:, ::1] cols, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
            Py_ssize_t ho, Py_ssize_t wo, real[:, :, :, ::1] out):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[3]
    cdef Py_ssize_t b, i, j, ky, kx, ch, row, col
    with nogil:
        row = 0
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    col = 0
                    for ky in range(kh):
                        for kx in range(kw):
                            for ch in range(c):
                                out[b, i * stride + ky, j * stride + kx, ch] += cols[row, col]
                                col += 1
                    row += 1


def im2col(xp, kh, kw, stride, ho, wo):
    xp = np.ascontiguousarray(xp)
    out = np.empty((xp.shape[0] * ho * wo, kh * kw * xp.shape[3]), dtype=xp.dtype)
    _im2col(xp, kh, kw, stride, ho, wo, out)
    return out


def col2im(cols, n, hp, wp, c, kh, kw, stride, ho, wo):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    _col2im(cols, kh, kw, stride, ho, wo, out)
    return out


def _bn_stats(real[:, ::1] x, double[::1] mean, double[::1] var):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], i, j
    cdef double d
    with nogil:
        for j in range(c):
            mean[j] = 0.0
            var[j] = 0.0
        for i in range(m):
            for j in range(c):
                mean[j] += x[i, j]
        for j in range(c):
            mean[j] /= m
        for i in range(m):
            for j in range(c):
                d = x[i, j] - mean[j]
                var[j] += d * d
        for j in range(c):
            var[j] /= m


def _bn_apply(real[:, ::1] x, real[::1] mean, real[::1] inv_std, real[::1] gamma,
              real[::1] beta, real[:, ::1] xhat, real[:, ::1] y):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], i, j
    cdef real h
    with nogil:
        for i in range(m):
            for j in range(c):
                h = (x[i, j] - mean[j]) * inv_std[j]
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]


def _bn_grad_sums(real[:, ::1] g, real[:, ::1] xhat, double[::1] sum_g, double[::1] sum_gx):
    cdef Py_ssize_t m = g.shape[0], c = g.shape[1], i, j
    with nogil:
        for j in range(c):
            sum_g[j] = 0.0
            sum_gx[j] = 0.0
        for i in range(m):
            for j in range(c):
                sum_g[j] += g[i, j]
                sum_gx[j] += g[i, j] * xhat[i, j]


def _bn_backward_input(real[:, ::1] g, real[:, ::1] xhat, real[::1] scale,
                       real[::1] mean_g, real[::1] mean_gx, real[:, ::1] dx):
    cdef Py_ssize_t m = g.shape[0], c = g.shape[1], i, j
    with nogil:
        for i in range(m):
            for j in range(c):
                dx[i, j] = scale[j] * (g[i, j] - mean_g[j] - xhat[i, j] * mean_gx[j])


def bn_stats(x2):
    x2 = np.ascontiguousarray(x2)
    c = x2.shape[1]
    mean = np.empty(c)
    var = np.empty(c)
    _bn_stats(x2, mean, var)
    return mean, var


def bn_apply(x2, mean, inv_std, gamma, beta):
    x2 = np.ascontiguousarray(x2)
    dt = x2.dtype
    xhat = np.empty_like(x2)
    y = np.empty_like(x2)
    _bn_apply(x2, np.ascontiguousarray(mean, dtype=dt), np.ascontiguousarray(inv_std, dtype=dt),
              np.ascontiguousarray(gamma, dtype=dt), np.ascontiguousarray(beta, dtype=dt), xhat, y)
    return xhat, y


def bn_grad_sums(g2, xhat2):
    g2 = np.ascontiguousarray(g2)
    c = g2.shape[1]
    sum_g = np.empty(c)
    sum_gx = np.empty(c)
    _bn_grad_sums(g2, np.ascontiguousarray(xhat2), sum_g, sum_gx)
    return sum_g, sum_gx


def bn_backward_input(g2, xhat2, scale, mean_g, mean_gx):
    g2 = np.ascontiguousarray(g2)
    dt = g2.dtype
    dx = np.empty_like(g2)
    _bn_backward_input(g2, np.ascontiguousarray(xhat2), np.ascontiguousarray(scale, dtype=dt),
                       np.ascontiguousarray(mean_g, dtype=dt), np.ascontiguousarray(mean_gx, dtype=dt), dx)
    return dx
