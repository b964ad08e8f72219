"""Reproducible synthetic corpus: formant-harmonic speakers, a noise bank and manifests.

Everything written by :func:`build_corpus` is a pure function of its arguments;
each utterance and noise clip draws from its own stream keyed by
``(seed, kind, id)``, so generation order does not matter.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import derive_rng
from .signal import (SAMPLE_RATE, NoiseType, Waveform, make_television,
                     read_wav, write_wav)
from .trials import TrialSet

logger = logging.getLogger(__name__)

SPEECH_PEAK = 0.5
SPLITS = ("train", "test")
# bank material on disk; television is assembled from music + babble sources at mix time
BANK_KINDS = (NoiseType.AMBIENT, NoiseType.MUSIC, NoiseType.BABBLE)


class CorpusError(ValueError):
    pass


@dataclass
class SpeakerProfile:
    speaker_id: str
    f0: float
    formants: list                 # centre frequencies, Hz, ascending
    bandwidths: list               # Hz, one per formant
    harmonic_tilt: float = -6.0    # dB per octave above f0
    jitter: float = 0.01           # relative per-frame f0 perturbation

    def __post_init__(self):
        if not 70 <= self.f0 <= 320:
            raise CorpusError(f"f0 {self.f0} outside [70, 320] Hz")
        if len(self.formants) != len(self.bandwidths) or not self.formants:
            raise CorpusError("need one bandwidth per formant")
        if list(self.formants) != sorted(self.formants) or self.formants[-1] >= SAMPLE_RATE / 2:
            raise CorpusError("formants must ascend and stay below Nyquist")


def random_profile(speaker_id: str, rng: np.random.Generator) -> SpeakerProfile:
    """Draw a plausible adult voice: f0, vocal-tract scaling of neutral formants, tilt, jitter."""
    f0 = float(np.exp(rng.uniform(np.log(85.0), np.log(260.0))))
    tract = rng.uniform(0.85, 1.2)
    base = np.array([520.0, 1480.0, 2500.0]) * tract * rng.uniform(0.93, 1.07, size=3)
    formants = np.sort(base).tolist()
    bandwidths = (np.array([70.0, 100.0, 160.0]) * rng.uniform(0.7, 1.4, size=3)).tolist()
    return SpeakerProfile(speaker_id, f0, formants, bandwidths,
                          harmonic_tilt=float(rng.uniform(-9.0, -3.0)),
                          jitter=float(rng.uniform(0.005, 0.02)))


def _resonator_gain(freqs, centre, bandwidth):
    """Magnitude of a unit-DC-gain second-order resonance."""
    r = freqs / centre
    return 1.0 / np.sqrt((1.0 - r * r) ** 2 + (freqs * bandwidth / centre ** 2) ** 2)


def _syllable_plan(n, rate, rng):
    """List of (start, stop) sample spans of voiced bursts separated by short pauses."""
    spans, pos = [], int(rng.uniform(0.0, 0.08) * rate)
    while pos < n:
        length = int(rng.uniform(0.12, 0.30) * rate)
        spans.append((pos, min(pos + length, n)))
        pos += length + int(rng.uniform(0.03, 0.15) * rate)
    return spans


def synth_speaker(profile: SpeakerProfile, duration_s: float, rng: np.random.Generator,
                  rate: int = SAMPLE_RATE, vowel_spread: float = 0.12) -> Waveform:
    """Harmonic source through cascaded formant resonances, gated into syllable-like bursts.

    Each burst perturbs the formants by up to ``vowel_spread`` (vowel quality);
    with ``jitter == 0`` the pitch period is exactly ``rate / f0``.
    """
    if duration_s < 1.0:
        raise CorpusError("utterances must last at least 1 s")
    n = int(round(duration_s * rate))
    hop = rate // 100
    n_frames = n // hop + 2
    f0_frames = profile.f0 * (1.0 + profile.jitter * rng.standard_normal(n_frames))
    f0_track = np.interp(np.arange(n), np.arange(n_frames) * hop, f0_frames)
    phase = 2 * np.pi * np.cumsum(f0_track) / rate
    n_harm = max(1, int((0.475 * rate) / f0_track.max()))
    harmonics = np.arange(1, n_harm + 1)
    formants = np.asarray(profile.formants, dtype=np.float64)
    bands = np.asarray(profile.bandwidths, dtype=np.float64)
    tilt = 10.0 ** (profile.harmonic_tilt * np.log2(harmonics) / 20.0)

    out = np.zeros(n)
    for start, stop in _syllable_plan(n, rate, rng):
        f_syl = formants * (1.0 + vowel_spread * rng.uniform(-1.0, 1.0, size=formants.size))
        f_syl = np.minimum(np.sort(f_syl), 0.45 * rate)
        freqs = harmonics * f0_track[start:stop].mean()
        amp = tilt.copy()
        for fc, bw in zip(f_syl, bands):
            amp *= _resonator_gain(freqs, fc, bw)
        amp[freqs >= 0.475 * rate] = 0.0
        seg = np.sin(np.outer(phase[start:stop], harmonics)) @ amp
        out[start:stop] += seg * np.hanning(stop - start)
    peak = np.max(np.abs(out))
    if peak == 0:
        raise CorpusError("synthesis produced silence")
    out *= SPEECH_PEAK / peak
    # faint recording floor so silent gaps are not digitally zero
    out += 10 ** (-70 / 20) * rng.standard_normal(n)
    return Waveform(out, rate)


def synth_ambient(duration_s: float, rng: np.random.Generator, rate: int = SAMPLE_RATE) -> Waveform:
    """Gaussian noise with a random smooth spectral shape and slow level drift."""
    n = int(round(duration_s * rate))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    octaves = np.log2(np.maximum(f, 50.0) / 1000.0)
    shape_db = rng.uniform(-2.5, 0.5) * octaves
    for _ in range(2):
        centre, width, gain = rng.uniform(-3.0, 2.5), rng.uniform(0.8, 2.0), rng.uniform(-5.0, 6.0)
        shape_db += gain * np.exp(-0.5 * ((octaves - centre) / width) ** 2)
    x = np.fft.irfft(spec * 10 ** (shape_db / 20.0), n)
    t = np.arange(n) / rate
    x *= 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return Waveform(x * (0.5 / np.max(np.abs(x))), rate)


def synth_music(duration_s: float, rng: np.random.Generator, rate: int = SAMPLE_RATE,
                beat_s: float | None = None) -> Waveform:
    """Tone clusters struck on a regular beat with decaying envelopes."""
    n = int(round(duration_s * rate))
    beat_s = float(rng.uniform(0.3, 0.6)) if beat_s is None else beat_s
    beat = int(round(beat_s * rate))
    out = np.zeros(n)
    root = 110.0 * 2 ** (rng.integers(0, 24) / 12.0)
    scale = np.array([0, 2, 4, 5, 7, 9, 11, 12, 14, 16])
    decay = rng.uniform(4.0, 9.0)
    for start in range(0, n, beat):
        stop = min(start + beat, n)
        t = np.arange(stop - start) / rate
        env = np.exp(-decay * t)
        chord = root * 2 ** (rng.choice(scale, size=int(rng.integers(2, 5)), replace=False) / 12.0)
        note = np.zeros(stop - start)
        for f in chord:
            for h, a in ((1, 1.0), (2, 0.5), (3, 0.25)):
                if h * f < 0.45 * rate:
                    note += a * np.sin(2 * np.pi * h * f * t + rng.uniform(0, 2 * np.pi))
        out[start:stop] = note * env
    return Waveform(out * (0.5 / np.max(np.abs(out))), rate)


def synth_noise_bank(kind, count: int, rng: np.random.Generator, duration_s=(3.0, 6.0),
                     rate: int = SAMPLE_RATE) -> list:
    """`count` clips of one noise type.

    Babble entries are the *sources* (speech of speakers not in the corpus);
    mixtures of 3-6 of them are formed at augmentation time. Television clips
    are assembled here from fresh music and speech for standalone use.
    """
    kind = NoiseType(kind)
    if count < 1:
        raise CorpusError("count must be >= 1")
    lo, hi = duration_s
    clips = []
    for i in range(count):
        dur = float(rng.uniform(lo, hi))
        if kind is NoiseType.AMBIENT:
            clips.append(synth_ambient(dur, rng, rate))
        elif kind is NoiseType.MUSIC:
            clips.append(synth_music(dur, rng, rate))
        elif kind is NoiseType.BABBLE:
            prof = random_profile(f"babble{i}", rng)
            clips.append(synth_speaker(prof, dur, rng, rate))
        else:
            music = synth_music(dur, rng, rate)
            speech = synth_speaker(random_profile(f"tv{i}", rng), dur, rng, rate)
            clips.append(make_television(music, speech))
    return clips


@dataclass
class UttEntry:
    utt_id: str
    spk_id: str
    path: str
    duration: float
    split: str


@dataclass
class NoiseEntry:
    noise_id: str
    kind: str
    path: str
    duration: float
    split: str


@dataclass
class CorpusManifest:
    utts: list = field(default_factory=list)
    noises: list = field(default_factory=list)
    root: str = "."

    def __post_init__(self):
        ids = [u.utt_id for u in self.utts]
        if len(ids) != len(set(ids)):
            raise CorpusError("utterance ids must be unique")
        train = {n.noise_id for n in self.noises if n.split == "train"}
        test = {n.noise_id for n in self.noises if n.split == "test"}
        if train & test:
            raise CorpusError("noise splits overlap")

    def split(self, name):
        return [u for u in self.utts if u.split == name]

    def noise_ids(self, split, kind=None):
        return [n.noise_id for n in self.noises
                if n.split == split and (kind is None or n.kind == NoiseType(kind).value)]

    def speakers(self, split="train"):
        return sorted({u.spk_id for u in self.utts if u.split == split})

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.root) / p

    def write(self, out_dir):
        out_dir = Path(out_dir)
        with open(out_dir / "manifest.tsv", "w") as fh:
            for u in self.utts:
                fh.write(f"{u.utt_id}\t{u.spk_id}\t{u.path}\t{u.duration:.4f}\t{u.split}\n")
        with open(out_dir / "noise.tsv", "w") as fh:
            for nz in self.noises:
                fh.write(f"{nz.noise_id}\t{nz.kind}\t{nz.path}\t{nz.duration:.4f}\t{nz.split}\n")

    @classmethod
    def read(cls, corpus_dir):
        """Load ``manifest.tsv`` (and ``noise.tsv`` if present) from `corpus_dir`."""
        corpus_dir = Path(corpus_dir)
        utts = []
        for line in (corpus_dir / "manifest.tsv").read_text().splitlines():
            if line.strip():
                uid, spk, path, dur, split = line.split("\t")
                utts.append(UttEntry(uid, spk, path, float(dur), split))
        noises = []
        noise_file = corpus_dir / "noise.tsv"
        if noise_file.exists():
            for line in noise_file.read_text().splitlines():
                if line.strip():
                    nid, kind, path, dur, split = line.split("\t")
                    noises.append(NoiseEntry(nid, kind, path, float(dur), split))
        return cls(utts, noises, str(corpus_dir))


@dataclass
class CorpusSpec:
    n_speakers: int = 12
    utts_per_speaker: int = 20
    n_test_speakers: int = 8
    test_utts_per_speaker: int = 10
    duration_s: float = 3.0
    noise_per_type: int = 8
    noise_duration_s: tuple = (3.0, 6.0)


def build_corpus(n_speakers: int, utts_per_speaker: int, seed: int, out_dir,
                 **options) -> CorpusManifest:
    """Synthesize training/test speakers and a split noise bank under `out_dir`.

    Test utterances come from speakers disjoint from the training speakers;
    every noise type has disjoint train and test clips (babble sources come
    from extra speakers, different per split). Extra keyword options are
    :class:`CorpusSpec` fields.
    """
    spec = CorpusSpec(n_speakers=n_speakers, utts_per_speaker=utts_per_speaker, **options)
    if spec.n_speakers < 2 or spec.utts_per_speaker < 2:
        raise CorpusError("need at least 2 speakers with 2 utterances each")
    if spec.n_test_speakers and spec.n_test_speakers < 2:
        raise CorpusError("a test split needs at least 2 speakers")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "noise").mkdir(parents=True, exist_ok=True)

    utts = []
    groups = [("train", "spk", spec.n_speakers, spec.utts_per_speaker),
              ("test", "tst", spec.n_test_speakers, spec.test_utts_per_speaker)]
    for split, prefix, n_spk, n_utt in groups:
        for s in range(n_spk):
            spk_id = f"{prefix}{s:03d}"
            profile = random_profile(spk_id, derive_rng(seed, "profile", spk_id))
            for u in range(n_utt):
                utt_id = f"{spk_id}-u{u:03d}"
                wav = synth_speaker(profile, spec.duration_s, derive_rng(seed, "utt", utt_id))
                rel = Path("wav") / f"{utt_id}.wav"
                write_wav(wav, out_dir / rel)
                utts.append(UttEntry(utt_id, spk_id, str(rel), wav.duration, split))

    noises = []
    for split in SPLITS:
        for kind in BANK_KINDS:
            clips = synth_noise_bank(kind, spec.noise_per_type,
                                     derive_rng(seed, "noise", kind.value, split),
                                     duration_s=spec.noise_duration_s)
            for i, clip in enumerate(clips):
                nid = f"{kind.value}-{split}-{i:03d}"
                rel = Path("noise") / f"{nid}.wav"
                write_wav(clip, out_dir / rel)
                noises.append(NoiseEntry(nid, kind.value, str(rel), clip.duration, split))

    manifest = CorpusManifest(utts, noises, str(out_dir))
    manifest.write(out_dir)
    logger.info("corpus: %d utterances, %d noise clips in %s", len(utts), len(noises), out_dir)
    return manifest


class Corpus:
    """In-memory view of a manifest: waveforms by utterance id and noise banks by (kind, split)."""

    def __init__(self, manifest: CorpusManifest):
        self.manifest = manifest
        self.utts = {u.utt_id: u for u in manifest.utts}
        self._wavs = {}
        self._noise = {}
        self.noise_index = {n.noise_id: n for n in manifest.noises}
        train_spk = manifest.speakers("train")
        self.speaker_index = {spk: i for i, spk in enumerate(train_spk)}

    @classmethod
    def open(cls, corpus_dir):
        return cls(CorpusManifest.read(corpus_dir))

    def wave(self, utt_id) -> Waveform:
        if utt_id not in self._wavs:
            if utt_id not in self.utts:
                raise CorpusError(f"unknown utterance {utt_id!r}")
            self._wavs[utt_id] = read_wav(self.manifest.resolve(self.utts[utt_id].path))
        return self._wavs[utt_id]

    def noise(self, noise_id) -> Waveform:
        if noise_id not in self._noise:
            if noise_id not in self.noise_index:
                raise CorpusError(f"unknown noise clip {noise_id!r}")
            self._noise[noise_id] = read_wav(self.manifest.resolve(self.noise_index[noise_id].path))
        return self._noise[noise_id]

    def noise_ids(self, split, kind):
        return self.manifest.noise_ids(split, kind)

    def train_ids(self):
        return [u.utt_id for u in self.manifest.split("train")]

    def test_ids(self):
        return [u.utt_id for u in self.manifest.split("test")]


def build_trials(manifest: CorpusManifest, n_target: int, n_nontarget: int, seed: int,
                 split: str = "test") -> TrialSet:
    """Sample distinct same-speaker and cross-speaker utterance pairs from one split."""
    utts = manifest.split(split)
    pairs_t, pairs_n = [], []
    for a, b in itertools.combinations(utts, 2):
        (pairs_t if a.spk_id == b.spk_id else pairs_n).append((a.utt_id, b.utt_id))
    if n_target > len(pairs_t):
        raise CorpusError(f"requested {n_target} target trials, only {len(pairs_t)} exist")
    if n_nontarget > len(pairs_n):
        raise CorpusError(f"requested {n_nontarget} nontarget trials, only {len(pairs_n)} exist")
    if n_target < 1 or n_nontarget < 1:
        raise CorpusError("need at least one trial of each kind")
    rng = derive_rng(seed, "trials")
    chosen = [("target",) + pairs_t[i] for i in rng.choice(len(pairs_t), n_target, replace=False)]
    chosen += [("nontarget",) + pairs_n[i] for i in rng.choice(len(pairs_n), n_nontarget, replace=False)]
    order = rng.permutation(len(chosen))
    labels = [chosen[i][0] for i in order]
    return TrialSet(labels, [chosen[i][1] for i in order], [chosen[i][2] for i in order])


def count_pairs(manifest: CorpusManifest, split="test"):
    """Number of available (target, nontarget) pairs in `split`."""
    utts = manifest.split(split)
    per_spk = {}
    for u in utts:
        per_spk[u.spk_id] = per_spk.get(u.spk_id, 0) + 1
    total = len(utts) * (len(utts) - 1) // 2
    target = sum(k * (k - 1) // 2 for k in per_spk.values())
    return target, total - target
