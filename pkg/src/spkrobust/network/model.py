"""Residual embedding network with global statistics pooling and a classifier head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (BatchNorm, Conv2d, Dropout, GlobalStatsPool, Linear, ReLU,
                     ResidualBlock, ShapeError)
from .params import ParamStore, load_checkpoint, save_checkpoint

HEADS = ("softmax", "a-softmax")


class NonFiniteError(FloatingPointError):
    """A forward pass produced NaN or Inf."""


@dataclass
class NetConfig:
    stage_channels: list = field(default_factory=lambda: [4, 8, 16, 32])
    stage_blocks: list = field(default_factory=lambda: [1, 1, 1, 1])
    n_mels: int = 64
    embedding_dim: int = 64
    n_classes: int = 12
    dropout_p: float = 0.5
    head: str = "softmax"
    margin: int = 4

    def __post_init__(self):
        self.stage_channels = [int(c) for c in self.stage_channels]
        self.stage_blocks = [int(b) for b in self.stage_blocks]
        if len(self.stage_channels) != len(self.stage_blocks) or not self.stage_channels:
            raise ValueError("stage_channels and stage_blocks must be equal-length and non-empty")
        if min(self.stage_channels + self.stage_blocks) < 1:
            raise ValueError("channels and block counts must be positive")
        if min(self.n_mels, self.embedding_dim, self.n_classes) < 1:
            raise ValueError("n_mels, embedding_dim and n_classes must be positive")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.margin not in (1, 2, 3, 4):
            raise ValueError("A-softmax margin must be 1..4")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")

    @classmethod
    def full(cls, **overrides):
        """The full-size profile: ResNet-34 layout, 128-d embedding, 1211 classes."""
        kw = dict(stage_channels=[16, 32, 64, 128], stage_blocks=[3, 4, 6, 3],
                  embedding_dim=128, n_classes=1211)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def desk(cls, **overrides):
        return cls(**overrides)

    def to_dict(self):
        return asdict(self)


def stage_stride(index: int) -> int:
    # first stage keeps resolution, later stages halve it
    return 1 if index == 0 else 2


def shape_trace(cfg: NetConfig, n_frames: int):
    """(layer, (C, H, W)) after each stage for an input of `n_frames` frames, then pooled sizes."""
    h, w = cfg.n_mels, n_frames
    trace = [("conv1", (cfg.stage_channels[0], h, w))]
    for i, c in enumerate(cfg.stage_channels):
        s = stage_stride(i)
        h, w = -(-h // s), -(-w // s)
        trace.append((f"layer{i + 1}", (c, h, w)))
    trace.append(("encoding", (2 * cfg.stage_channels[-1],)))
    trace.append(("embedding", (cfg.embedding_dim,)))
    trace.append(("classifier", (cfg.n_classes,)))
    return trace


def symbolic_shape_trace(cfg: NetConfig):
    """Like :func:`shape_trace` with the time axis written in terms of ``L``."""
    out = []
    h, div = cfg.n_mels, 1
    out.append(("conv1", f"{cfg.stage_channels[0]}x{h}xL"))
    for i, c in enumerate(cfg.stage_channels):
        s = stage_stride(i)
        h, div = -(-h // s), div * s
        out.append((f"layer{i + 1}", f"{c}x{h}x" + ("L" if div == 1 else f"L/{div}")))
    out.append(("encoding", str(2 * cfg.stage_channels[-1])))
    out.append(("embedding", str(cfg.embedding_dim)))
    out.append(("classifier", str(cfg.n_classes)))
    return out


class SpeakerNet:
    """Conv stem, residual stages, statistics pooling and the embedding layer.

    The identification head lives alongside: a dropout+affine layer for the
    softmax head, or a bias-free weight matrix consumed by the A-softmax loss.
    """

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.store = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        ch = cfg.stage_channels
        self.stem = [Conv2d(self.store, "conv1", 1, ch[0], 3, 1, rng=rng),
                     BatchNorm(self.store, "bn1", ch[0]), ReLU()]
        self.blocks = []
        c_prev = ch[0]
        for i, (c, nb) in enumerate(zip(ch, cfg.stage_blocks)):
            for j in range(nb):
                stride = stage_stride(i) if j == 0 else 1
                self.blocks.append(ResidualBlock(self.store, f"layer{i + 1}.{j}", c_prev, c, stride, rng=rng))
                c_prev = c
        self.pool = GlobalStatsPool()
        self.embedding = Linear(self.store, "embedding", 2 * c_prev, cfg.embedding_dim, rng=rng)
        self.tape = self.stem + self.blocks + [self.pool, self.embedding]
        if cfg.head == "softmax":
            self.dropout = Dropout(cfg.dropout_p, rng=np.random.default_rng(seed + 1))
            self.classifier = Linear(self.store, "classifier", cfg.embedding_dim, cfg.n_classes, rng=rng)
            self.class_weight = self.classifier.w
        else:
            self.dropout = None
            self.classifier = None
            w = rng.standard_normal((cfg.n_classes, cfg.embedding_dim))
            w /= np.linalg.norm(w, axis=1, keepdims=True)
            self.class_weight = self.store.add("classifier.weight", w)

    @property
    def dtype(self):
        return self.store.dtype

    def embed(self, feats, train=False):
        """Embeddings for a batch of feature matrices shaped ``(N, frames, n_mels)``."""
        x = np.asarray(feats, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.cfg.n_mels:
            raise ShapeError(f"expected (N, frames, {self.cfg.n_mels}) features, got {x.shape}")
        # mel bins become the image height, frames the width
        x = np.ascontiguousarray(x.transpose(0, 2, 1)[..., None])
        for layer in self.tape:
            x = layer.forward(x, train)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite embedding in forward pass")
        return x

    def backward_embed(self, d_emb):
        g = np.asarray(d_emb, dtype=self.dtype)
        for layer in reversed(self.tape):
            g = layer.backward(g)
        return g

    def logits(self, emb, train=False):
        """Classifier scores: affine for softmax, ``||f|| cos(theta_j)`` for A-softmax."""
        if self.classifier is not None:
            h = self.dropout.forward(emb, train)
            return self.classifier.forward(h, train)
        w = self.class_weight.value
        wn = w / np.linalg.norm(w, axis=1, keepdims=True)
        return emb @ wn.T

    def backward_logits(self, d_logits):
        if self.classifier is None:
            raise RuntimeError("A-softmax gradients come from the loss directly")
        return self.dropout.backward(self.classifier.backward(d_logits))

    def checkpoint_config(self):
        return {"net": self.cfg.to_dict(), "dtype": self.dtype.name}

    def save(self, path):
        save_checkpoint(path, self.store, self.checkpoint_config())

    @classmethod
    def load(cls, path, dtype=None):
        config, state = load_checkpoint(path)
        net = cls(NetConfig(**config["net"]), dtype=dtype or config.get("dtype", "float32"))
        net.store.load_state(state)
        return net
