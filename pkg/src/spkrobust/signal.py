"""Waveform primitives: WAV I/O, power, SNR-exact mixing and composite noises."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
COMPOSITE_PEAK = 0.9


class SignalError(ValueError):
    """Raised for invalid or degenerate waveform inputs."""


class NoiseType(str, enum.Enum):
    MUSIC = "music"
    AMBIENT = "ambient"
    TELEVISION = "television"
    BABBLE = "babble"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise SignalError("waveform must be mono (1-D)")
        if self.sample_rate <= 0:
            raise SignalError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


class ClipCounter:
    """Process-wide tally of samples clipped when writing PCM16."""

    def __init__(self):
        self.events = 0
        self.samples = 0

    def record(self, n):
        if n:
            self.events += 1
            self.samples += int(n)

    def reset(self):
        self.events = 0
        self.samples = 0


clip_counter = ClipCounter()


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 RIFF/WAVE file as a mono waveform in [-1, 1].

    Multichannel audio is averaged across channels.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise SignalError(f"{path}: malformed or unsupported WAV ({exc})") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise SignalError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.shape[0] == 0:
        raise SignalError(f"{path}: zero-length payload")
    return Waveform(x, int(rate))


def write_wav(w: Waveform, path, clip: str = "clip") -> int:
    """Write `w` as mono PCM16 little-endian; returns the number of clipped samples.

    ``clip="clip"`` hard-clips out-of-range samples and records the event in
    :data:`clip_counter`; ``clip="error"`` raises instead.
    """
    x = w.samples
    over = int(np.count_nonzero(np.abs(x) > 1.0))
    if over:
        if clip == "error":
            raise SignalError(f"{over} samples exceed full scale")
        if clip != "clip":
            raise ValueError(f"unknown clip policy {clip!r}")
        logger.debug("clipping %d samples while writing %s", over, path)
        clip_counter.record(over)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(str(path), w.sample_rate, pcm)
    return over


def rms_power(w: Waveform) -> float:
    """Mean of squared samples (linear power)."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.size == 0:
        raise SignalError("power of an empty waveform is undefined")
    return float(np.mean(x * x))


def fit_noise_to(noise: Waveform, target_len: int, offset_rng: np.random.Generator) -> Waveform:
    """Crop (longer noise) or tile from a random phase (shorter noise) to `target_len`."""
    n = len(noise)
    if n == 0:
        raise SignalError("cannot fit an empty noise clip")
    if target_len <= 0:
        raise SignalError("target length must be positive")
    if n >= target_len:
        start = int(offset_rng.integers(0, n - target_len + 1))
        out = noise.samples[start:start + target_len]
    else:
        start = int(offset_rng.integers(0, n))
        idx = (start + np.arange(target_len)) % n
        out = noise.samples[idx]
    return Waveform(out.copy(), noise.sample_rate)


def snr_gain(clean_power: float, noise_power: float, snr_db: float) -> float:
    """Amplitude gain for the noise so that the mixture has the requested SNR."""
    return float(np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def measure_snr(clean: Waveform, mixture: Waveform) -> float:
    """SNR in dB of the additive component ``mixture - clean`` against ``clean``."""
    resid = mixture.samples - clean.samples
    return float(10.0 * np.log10(rms_power(clean) / rms_power(resid)))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
               rng: np.random.Generator | None = None) -> Waveform:
    """Return ``clean + g * noise'`` where the noise is fitted to the clean length.

    `rng` drives the crop/tiling offset; without one the offset is zero.
    """
    if clean.sample_rate != noise.sample_rate:
        raise SignalError("sample rates differ")
    p_clean = rms_power(clean)
    if p_clean == 0.0:
        raise SignalError("clean signal is silent; SNR undefined")
    if rng is None:
        rng = np.random.default_rng(0)
    fitted = fit_noise_to(noise, len(clean), rng)
    p_noise = rms_power(fitted)
    if p_noise == 0.0:
        raise SignalError("noise is silent; SNR undefined")
    g = snr_gain(p_clean, p_noise, snr_db)
    return Waveform(clean.samples + g * fitted.samples, clean.sample_rate)


def _peak_normalize(x: np.ndarray, what: str) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak == 0.0 or not np.isfinite(peak):
        raise SignalError(f"degenerate {what}: silent result")
    return x * (COMPOSITE_PEAK / peak)


def make_babble(speech_pool, k: int, rng: np.random.Generator,
                return_indices: bool = False):
    """Overlap `k` distinct pool members (3 <= k <= 6), peak-normalized to 0.9."""
    if not 3 <= k <= 6:
        raise SignalError(f"babble needs 3..6 sources, got {k}")
    if len(speech_pool) < k:
        raise SignalError(f"pool has {len(speech_pool)} clips, need {k}")
    idx = rng.choice(len(speech_pool), size=k, replace=False)
    chosen = [speech_pool[int(i)] for i in idx]
    rate = chosen[0].sample_rate
    if any(c.sample_rate != rate for c in chosen):
        raise SignalError("sample rates differ")
    length = max(len(c) for c in chosen)
    total = np.zeros(length)
    for c in chosen:
        total += fit_noise_to(c, length, rng).samples
    out = Waveform(_peak_normalize(total, "babble"), rate)
    if return_indices:
        return out, [int(i) for i in idx]
    return out


def make_television(music: Waveform, speech: Waveform) -> Waveform:
    """Equal-power music+speech mix at the longer length, peak-normalized to 0.9.

    The shorter input is tiled from offset zero.
    """
    if len(music) == 0 or len(speech) == 0:
        raise SignalError("television inputs must be non-empty")
    if music.sample_rate != speech.sample_rate:
        raise SignalError("sample rates differ")
    p_music, p_speech = rms_power(music), rms_power(speech)
    if p_music == 0.0 or p_speech == 0.0:
        raise SignalError("television input is silent")
    gain = np.sqrt(p_music / p_speech)
    length = max(len(music), len(speech))
    m = np.resize(music.samples, length)
    s = np.resize(speech.samples, length)
    return Waveform(_peak_normalize(m + gain * s, "television"), music.sample_rate)
