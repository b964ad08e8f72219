"""Pure-numpy convolution kernels (channels-last). Reference for the compiled core."""

import numpy as np


def im2col(xp, kh, kw, stride, ho, wo):
    """Patches of padded NHWC input `xp` as a ``(N*ho*wo, kh*kw*C)`` matrix.

    Column order is (ky, kx, c), matching a kernel laid out as (Cout, kh, kw, C).
    """
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    return win.reshape(n * ho * wo, kh * kw * c)


def col2im(cols, n, hp, wp, c, kh, kw, stride, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add patch gradients into a padded NHWC array."""
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    g = cols.reshape(n, ho, wo, kh, kw, c)
    for ky in range(kh):
        for kx in range(kw):
            out[:, ky:ky + stride * (ho - 1) + 1:stride,
                kx:kx + stride * (wo - 1) + 1:stride, :] += g[:, :, :, ky, kx, :]
    return out


def bn_stats(x2):
    """Per-column mean and population variance of an ``(M, C)`` array, in float64."""
    x64 = x2.astype(np.float64)
    mean = x64.mean(axis=0)
    d = x64 - mean
    return mean, np.einsum("ij,ij->j", d, d) / x2.shape[0]


def bn_apply(x2, mean, inv_std, gamma, beta):
    dt = x2.dtype
    xhat = (x2 - mean.astype(dt)) * inv_std.astype(dt)
    return xhat, xhat * gamma.astype(dt) + beta.astype(dt)


def bn_grad_sums(g2, xhat2):
    g64 = g2.astype(np.float64)
    return g64.sum(axis=0), np.einsum("ij,ij->j", g64, xhat2.astype(np.float64))


def bn_backward_input(g2, xhat2, scale, mean_g, mean_gx):
    dt = g2.dtype
    return scale.astype(dt) * (g2 - mean_g.astype(dt) - xhat2 * mean_gx.astype(dt))
