"""Log-Mel filterbank features and the binary feature dump format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .signal import SAMPLE_RATE, Waveform

FEAT_MAGIC = b"LMEL"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FbankConfig:
    sample_rate: int = SAMPLE_RATE
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 64
    fmin: float = 20.0
    fmax: float = 7600.0
    log_floor: float = 1e-10
    mean_norm: bool = False

    def __post_init__(self):
        if not (0 < self.win_length <= self.n_fft):
            raise FeatureError("need 0 < win_length <= n_fft")
        if self.hop_length <= 0:
            raise FeatureError("hop_length must be positive")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise FeatureError("need 0 <= fmin < fmax <= sample_rate/2")
        if self.n_mels < 1:
            raise FeatureError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise FeatureError("log_floor must be positive")


@dataclass
class FeatureMatrix:
    values: np.ndarray  # frames x n_mels
    frame_shift_s: float
    n_mels: int

    @property
    def frames(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_count(n_samples: int, cfg: FbankConfig) -> int:
    if n_samples < cfg.win_length:
        raise FeatureError(
            f"utterance of {n_samples} samples is shorter than one window ({cfg.win_length})")
    return (n_samples - cfg.win_length) // cfg.hop_length + 1


def mel_centers(cfg: FbankConfig) -> np.ndarray:
    """Filter breakpoints in Hz: n_mels + 2 points equally spaced on the HTK Mel scale."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=16)
def _filterbank(cfg: FbankConfig) -> np.ndarray:
    edges = mel_centers(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: FbankConfig) -> np.ndarray:
    """Unit-peak triangular filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    return _filterbank(cfg).copy()


def power_spectrogram(w: Waveform, cfg: FbankConfig) -> np.ndarray:
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    n = frame_count(x.shape[0], cfg)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)[::cfg.hop_length][:n]
    spec = np.fft.rfft(frames * np.hamming(cfg.win_length), n=cfg.n_fft, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def fbank_energies(w: Waveform, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Mel filterbank energies before the log, ``frames x n_mels``."""
    return power_spectrogram(w, cfg) @ _filterbank(cfg).T


def logmel(w: Waveform, cfg: FbankConfig = FbankConfig()) -> FeatureMatrix:
    if isinstance(w, Waveform) and w.sample_rate != cfg.sample_rate:
        raise FeatureError(f"expected {cfg.sample_rate} Hz audio, got {w.sample_rate}")
    values = np.log(fbank_energies(w, cfg) + cfg.log_floor)
    if cfg.mean_norm:
        values = values - values.mean(axis=0, keepdims=True)
    return FeatureMatrix(values, cfg.hop_length / cfg.sample_rate, cfg.n_mels)


def write_features(feat: FeatureMatrix, path) -> None:
    """Little-endian dump: magic, uint32 frames, uint32 n_mels, row-major float32."""
    vals = np.ascontiguousarray(feat.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", *vals.shape))
        fh.write(vals.tobytes())


def read_features(path, frame_shift_s: float = 0.01) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != FEAT_MAGIC:
        raise FeatureError(f"{path}: bad feature file magic")
    frames, n_mels = struct.unpack("<II", raw[4:12])
    vals = np.frombuffer(raw, dtype="<f4", offset=12)
    if vals.size != frames * n_mels:
        raise FeatureError(f"{path}: truncated feature payload")
    return FeatureMatrix(vals.reshape(frames, n_mels).astype(np.float32), frame_shift_s, n_mels)


def dump_feature_set(feats: dict, out_dir) -> Path:
    """Write one ``.lmel`` file per utterance plus ``feats.scp`` (utt_id<TAB>path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scp = out_dir / "feats.scp"
    with open(scp, "w") as fh:
        for utt_id in sorted(feats):
            p = out_dir / f"{utt_id}.lmel"
            write_features(feats[utt_id], p)
            fh.write(f"{utt_id}\t{p}\n")
    return scp
