"""Layers with hand-written backward passes.

Activations are channels-last: ``(N, H, W, C)`` for feature maps and ``(N, D)``
for vectors. Every layer caches what its backward needs during ``forward`` and
accumulates parameter gradients into the owning :class:`ParamStore`.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .params import ParamStore


class ShapeError(ValueError):
    pass


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d:
    """Bias-free 2-D convolution, kernel stored as ``(Cout, kh, kw, Cin)``."""

    def __init__(self, store: ParamStore, name, c_in, c_out, k=3, stride=1, pad=None, rng=None):
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.pad = (k - 1) // 2 if pad is None else pad
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = store.add(f"{name}.weight",
                           he_normal(rng, (c_out, k, k, c_in), k * k * c_in, store.dtype))
        self._cache = None

    def out_hw(self, h, w):
        return (conv_out_size(h, self.k, self.stride, self.pad),
                conv_out_size(w, self.k, self.stride, self.pad))

    def forward(self, x, train=True):
        n, h, w, c = x.shape
        if c != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {c}")
        ho, wo = self.out_hw(h, w)
        p = self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else np.ascontiguousarray(x)
        cols = kernels.im2col(xp, self.k, self.k, self.stride, ho, wo)
        wmat = self.w.value.reshape(self.c_out, -1)
        out = (cols @ wmat.T).reshape(n, ho, wo, self.c_out)
        self._cache = (cols, xp.shape, ho, wo)
        return out

    def backward(self, g):
        cols, (n, hp, wp, c), ho, wo = self._cache
        g2 = g.reshape(-1, self.c_out)
        self.w.grad += (g2.T @ cols).reshape(self.w.value.shape)
        dcols = g2 @ self.w.value.reshape(self.c_out, -1)
        dxp = kernels.col2im(dcols, n, hp, wp, c, self.k, self.k, self.stride, ho, wo)
        p = self.pad
        self._cache = None
        return dxp[:, p:hp - p, p:wp - p, :] if p else dxp


class BatchNorm:
    """Batch normalization over every axis but the last (channels).

    Statistics are accumulated in float64 regardless of the activation dtype.
    """

    def __init__(self, store: ParamStore, name, channels, momentum=0.1, eps=1e-5):
        self.gamma = store.add(f"{name}.weight", np.ones(channels))
        self.beta = store.add(f"{name}.bias", np.zeros(channels))
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps
        self._cache = None

    def forward(self, x, train=True):
        c = x.shape[-1]
        x2 = np.ascontiguousarray(x).reshape(-1, c)
        if train:
            m = x2.shape[0]
            mean, var = kernels.bn_stats(x2)
            mom = self.momentum
            self.running_mean[...] = (1 - mom) * self.running_mean + mom * mean
            self.running_var[...] = (1 - mom) * self.running_var + mom * var * (m / max(m - 1, 1))
        else:
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat, y = kernels.bn_apply(x2, mean, inv_std, self.gamma.value, self.beta.value)
        self._cache = (xhat, inv_std, train)
        return y.reshape(x.shape)

    def backward(self, g):
        xhat, inv_std, train = self._cache
        self._cache = None
        shape = g.shape
        g2 = np.ascontiguousarray(g).reshape(xhat.shape)
        sum_g, sum_gx = kernels.bn_grad_sums(g2, xhat)
        self.gamma.grad += sum_gx.astype(self.gamma.grad.dtype)
        self.beta.grad += sum_g.astype(self.beta.grad.dtype)
        scale = self.gamma.value * inv_std
        if not train:
            return (g2 * scale.astype(g2.dtype)).reshape(shape)
        m = g2.shape[0]
        dx = kernels.bn_backward_input(g2, xhat, scale, sum_g / m, sum_gx / m)
        return dx.reshape(shape)


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        mask, self._mask = self._mask, None
        return g * mask


class Dropout:
    """Inverted dropout; identity in eval mode or with ``p == 0``."""

    def __init__(self, p=0.5, rng=None):
        if not 0 <= p < 1:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, train=True):
        if not train or self.p == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, g):
        mask, self._mask = self._mask, None
        return g if mask is None else g * mask


class Linear:
    """Affine map ``y = x W^T + b`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, store: ParamStore, name, d_in, d_out, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = store.add(f"{name}.weight", he_normal(rng, (d_out, d_in), d_in, store.dtype))
        self.b = store.add(f"{name}.bias", np.zeros(d_out)) if bias else None
        self._x = None

    def forward(self, x, train=True):
        self._x = x
        y = x @ self.w.value.T
        return y + self.b.value if self.b is not None else y

    def backward(self, g):
        x, self._x = self._x, None
        self.w.grad += g.T @ x
        if self.b is not None:
            self.b.grad += g.sum(axis=0)
        return g @ self.w.value


def gsp_forward(x, axes=(1, 2)):
    """Per-channel mean and population standard deviation over `axes`.

    Returns ``(pooled, state)`` where ``pooled`` concatenates means then stds
    along the last axis.
    """
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    sigma = np.sqrt((centered * centered).mean(axis=axes, keepdims=True))
    pooled = np.concatenate([np.squeeze(mu, axis=axes), np.squeeze(sigma, axis=axes)], axis=-1)
    return pooled, (centered, sigma, axes)


def gsp_backward(grad_out, state):
    """Exact gradient of :func:`gsp_forward`; zero through the std branch where sigma == 0."""
    centered, sigma, axes = state
    c = centered.shape[-1]
    m = 1
    for a in axes:
        m *= centered.shape[a]
    g_mu = np.expand_dims(grad_out[..., :c], axis=axes)
    g_sigma = np.expand_dims(grad_out[..., c:], axis=axes)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(sigma > 0, g_sigma / (m * sigma), 0.0)
    return (g_mu / m + centered * coef).astype(centered.dtype, copy=False)


def gsp(feature_map):
    """Global statistics pooling of a ``(C, H, W)`` map into ``[mu_1..mu_C, sigma_1..sigma_C]``."""
    f = np.asarray(feature_map)
    if f.ndim != 3:
        raise ShapeError("gsp expects a (C, H, W) feature map")
    if f.shape[1] * f.shape[2] < 1:
        raise ShapeError("gsp over an empty spatial extent")
    pooled, _ = gsp_forward(np.moveaxis(f, 0, -1)[None], axes=(1, 2))
    return pooled[0]


class GlobalStatsPool:
    def __init__(self):
        self._state = None

    def forward(self, x, train=True):
        if x.shape[1] * x.shape[2] < 1:
            raise ShapeError("gsp over an empty spatial extent")
        out, self._state = gsp_forward(x, axes=(1, 2))
        return out

    def backward(self, g):
        state, self._state = self._state, None
        return gsp_backward(g, state)


class ResidualBlock:
    """Two 3x3 conv+BN layers with an identity or strided 1x1 conv+BN shortcut."""

    def __init__(self, store, name, c_in, c_out, stride=1, rng=None):
        self.conv1 = Conv2d(store, f"{name}.conv1", c_in, c_out, 3, stride, rng=rng)
        self.bn1 = BatchNorm(store, f"{name}.bn1", c_out)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(store, f"{name}.conv2", c_out, c_out, 3, 1, rng=rng)
        self.bn2 = BatchNorm(store, f"{name}.bn2", c_out)
        self.relu_out = ReLU()
        if stride != 1 or c_in != c_out:
            self.short_conv = Conv2d(store, f"{name}.shortcut.conv", c_in, c_out, 1, stride, pad=0, rng=rng)
            self.short_bn = BatchNorm(store, f"{name}.shortcut.bn", c_out)
        else:
            self.short_conv = self.short_bn = None

    def forward(self, x, train=True):
        y = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train), train)
        y = self.bn2.forward(self.conv2.forward(y, train), train)
        if self.short_conv is not None:
            s = self.short_bn.forward(self.short_conv.forward(x, train), train)
        else:
            s = x
        return self.relu_out.forward(y + s, train)

    def backward(self, g):
        g = self.relu_out.backward(g)
        dy = self.conv1.backward(self.bn1.backward(self.relu1.backward(
            self.conv2.backward(self.bn2.backward(g)))))
        if self.short_conv is not None:
            ds = self.short_conv.backward(self.short_bn.backward(g))
        else:
            ds = g
        return dy + ds
