"""Trainable parameters, running buffers and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"SPKCKPT\x00"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad.fill(0)


class ParamStore:
    """Named trainable tensors plus non-trainable buffers (batch-norm running stats)."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name, value) -> Param:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(np.asarray(value, dtype=self.dtype).copy())
        self.params[name] = p
        return p

    def add_buffer(self, name, value) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        buf = np.asarray(value, dtype=self.dtype).copy()
        self.buffers[name] = buf
        return buf

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def flat_values(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params.values()])

    def state(self) -> dict[str, np.ndarray]:
        out = {k: p.value for k, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise CheckpointError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            target = self.params[name].value if name in self.params else self.buffers[name]
            if target.shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != {target.shape}")
            target[...] = arr


def save_checkpoint(path, store: ParamStore, config: dict) -> None:
    """Versioned little-endian checkpoint.

    Layout: magic, uint32 version, uint32 config length, config JSON,
    uint32 entry count, then per entry: uint16 name length, name, uint8 ndim,
    uint32 dims, float32 row-major data.
    """
    cfg = json.dumps(config, sort_keys=True).encode()
    state = store.state()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            raw = name.encode()
            fh.write(struct.pack("<HB", len(raw), arr.ndim))
            fh.write(raw)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, cfg_len = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    config = json.loads(raw[pos:pos + cfg_len])
    pos += cfg_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    state = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", raw, pos)
        pos += 3
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    return config, state
