"""Speaker identification losses and the within-sample variability-invariant losses.

Every loss returns a :class:`LossValue` carrying the batch-mean value and the
gradient with respect to each input, in argument order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LossError(ValueError):
    pass


@dataclass
class LossValue:
    value: float
    grads: tuple


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels) -> LossValue:
    """Mean ``-log softmax(logits)[label]`` over the batch (max-shift stabilized)."""
    z = np.asarray(logits)
    single = z.ndim == 1
    z2 = z[None] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z2.shape[0]:
        raise LossError("one label per row of logits required")
    if np.any(y < 0) or np.any(y >= z2.shape[1]):
        raise LossError("label out of range")
    logp = _log_softmax(z2)
    n = z2.shape[0]
    rows = np.arange(n)
    value = float(-logp[rows, y].mean())
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad /= n
    return LossValue(value, (grad[0] if single else grad,))


def _chebyshev(m, c):
    """``(T_m(c), m * U_{m-1}(c))``: cos(m*theta) and its derivative in cos(theta)."""
    if m == 1:
        return c, np.ones_like(c)
    if m == 2:
        return 2 * c * c - 1, 4 * c
    if m == 3:
        return 4 * c ** 3 - 3 * c, 12 * c * c - 3
    if m == 4:
        return 8 * c ** 4 - 8 * c * c + 1, 32 * c ** 3 - 16 * c
    raise LossError(f"margin must be 1..4, got {m}")


def psi(cos_theta, m):
    """Margin-warped target angle ``(-1)^k cos(m theta) - 2k`` and its derivative in cos(theta).

    ``k`` indexes the interval ``[k pi/m, (k+1) pi/m]`` containing theta.
    """
    c = np.clip(cos_theta, -1.0, 1.0)
    theta = np.arccos(c)
    k = np.minimum(np.floor(m * theta / np.pi), m - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    t, dt = _chebyshev(m, c)
    return sign * t - 2 * k, sign * dt


def a_softmax(embedding, labels, weight, margin=4, anneal=0.0) -> LossValue:
    """Angular-margin softmax loss; gradients w.r.t. ``(embedding, weight)``.

    `weight` is ``(n_classes, p)`` and is row-normalized inside the loss. The
    target logit is ``||f|| * (anneal * cos + psi) / (1 + anneal)``; the other
    logits are ``||f|| * cos``.
    """
    f = np.asarray(embedding)
    single = f.ndim == 1
    f2 = f[None] if single else f
    w = np.asarray(weight)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if anneal < 0:
        raise LossError("anneal must be >= 0")
    if np.any(y < 0) or np.any(y >= w.shape[0]):
        raise LossError("label out of range")
    fnorm = np.linalg.norm(f2, axis=1)
    if np.any(fnorm == 0):
        raise LossError("zero-norm embedding")
    wnorm = np.linalg.norm(w, axis=1)
    wt = w / wnorm[:, None]
    n = f2.shape[0]
    rows = np.arange(n)

    proj = f2 @ wt.T                       # ||f|| cos(theta_j)
    cos_y = np.clip(proj[rows, y] / fnorm, -1.0, 1.0)
    ps, dps = psi(cos_y, margin)
    phi = (anneal * cos_y + ps) / (1.0 + anneal)
    dphi = (anneal + dps) / (1.0 + anneal)
    logits = proj.copy()
    logits[rows, y] = fnorm * phi

    ce = cross_entropy(logits, y)
    g = ce.grads[0]                         # dL/dlogits
    g_y = g[rows, y]
    g_other = g.copy()
    g_other[rows, y] = 0.0

    d_f = g_other @ wt
    unit_f = f2 / fnorm[:, None]
    wt_y = wt[y]
    d_f += g_y[:, None] * (phi[:, None] * unit_f + dphi[:, None] * (wt_y - cos_y[:, None] * unit_f))

    d_wt = g_other.T @ f2
    np.add.at(d_wt, y, (g_y * dphi)[:, None] * f2)
    radial = (d_wt * wt).sum(axis=1, keepdims=True)
    d_w = (d_wt - wt * radial) / wnorm[:, None]
    return LossValue(ce.value, (d_f[0] if single else d_f, d_w))


def a_softmax_logits(embedding, weight):
    """Margin-free A-softmax scores ``||f|| cos(theta_j)`` (used at inference)."""
    w = np.asarray(weight)
    return np.asarray(embedding) @ (w / np.linalg.norm(w, axis=1, keepdims=True)).T


def _pair_arrays(f_c, f_n):
    a, b = np.asarray(f_c), np.asarray(f_n)
    if a.shape != b.shape:
        raise LossError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse_within(f_c, f_n) -> LossValue:
    """``(1/p) ||f_c - f_n||^2`` averaged over pairs; gradients w.r.t. ``(f_c, f_n)``."""
    a, b = _pair_arrays(f_c, f_n)
    p = a.shape[-1]
    pairs = a.size // p
    diff = b - a
    value = float((diff * diff).sum() / (p * pairs))
    g_n = (2.0 / (p * pairs)) * diff
    return LossValue(value, (-g_n, g_n))


def cosine_within(f_c, f_n) -> LossValue:
    """``1 - cos(f_c, f_n)`` averaged over pairs; gradients w.r.t. ``(f_c, f_n)``."""
    a, b = _pair_arrays(f_c, f_n)
    single = a.ndim == 1
    a2, b2 = (a[None], b[None]) if single else (a, b)
    na = np.linalg.norm(a2, axis=1, keepdims=True)
    nb = np.linalg.norm(b2, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise LossError("zero-norm embedding")
    cos = (a2 * b2).sum(axis=1, keepdims=True) / (na * nb)
    pairs = a2.shape[0]
    value = float(np.mean(1.0 - cos))
    g_a = -(b2 / (na * nb) - cos * a2 / (na * na)) / pairs
    g_b = -(a2 / (na * nb) - cos * b2 / (nb * nb)) / pairs
    if single:
        g_a, g_b = g_a[0], g_b[0]
    return LossValue(value, (g_a, g_b))


WITHIN_LOSSES = {"mse": mse_within, "cosine": cosine_within}


def identification_loss_on(net, emb, labels, train=True, anneal=0.0) -> LossValue:
    """Mean identification loss of `net`'s head over a batch of embeddings.

    Classifier parameter gradients are accumulated into ``net.store``; the
    returned gradient is with respect to `emb`.
    """
    if net.cfg.head == "softmax":
        logits = net.logits(emb, train)
        ce = cross_entropy(logits, labels)
        return LossValue(ce.value, (net.backward_logits(ce.grads[0]),))
    loss = a_softmax(emb, labels, net.class_weight.value, net.cfg.margin, anneal)
    d_emb, d_w = loss.grads
    net.class_weight.grad += d_w.astype(net.dtype, copy=False)
    return LossValue(loss.value, (d_emb,))
