"""On-the-fly clean/noisy pair generation and the offline (pregenerated) contrast set."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, CorpusError
from .features import FbankConfig, FeatureMatrix, logmel
from .rng import derive_rng
from .signal import (NoiseType, Waveform, make_babble, make_television, mix_at_snr,
                     write_wav)

NOISE_TYPES = tuple(t.value for t in NoiseType)


class AugmentError(ValueError):
    pass


@dataclass
class AugmentPolicy:
    snr_low: float = 0.0
    snr_high: float = 20.0
    noise_type_weights: dict = field(default_factory=lambda: {t: 1.0 for t in NOISE_TYPES})
    babble_k_range: tuple = (3, 6)

    def __post_init__(self):
        if self.snr_low > self.snr_high:
            raise AugmentError("snr_low must not exceed snr_high")
        unknown = set(self.noise_type_weights) - set(NOISE_TYPES)
        if unknown:
            raise AugmentError(f"unknown noise types {sorted(unknown)}")
        w = np.array([self.noise_type_weights.get(t, 0.0) for t in NOISE_TYPES], dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise AugmentError("noise type weights must be nonnegative with a positive sum")
        lo, hi = self.babble_k_range
        if not 3 <= lo <= hi <= 6:
            raise AugmentError("babble_k_range must lie within [3, 6]")

    def probabilities(self):
        w = np.array([self.noise_type_weights.get(t, 0.0) for t in NOISE_TYPES], dtype=float)
        return w / w.sum()


@dataclass
class AugmentDraw:
    noise_type: str
    snr_db: float
    noise_ids: list = field(default_factory=list)
    k: int | None = None


def draw_augmentation(policy: AugmentPolicy, rng: np.random.Generator, bank=None) -> AugmentDraw:
    """Sample noise type, continuous SNR and (when `bank` is given) the clips to use.

    `bank` maps ``"music"``, ``"ambient"`` and ``"babble"`` to lists of noise ids;
    television takes one music clip and one babble-source (speech) clip.
    """
    kind = NOISE_TYPES[int(rng.choice(len(NOISE_TYPES), p=policy.probabilities()))]
    snr = float(rng.uniform(policy.snr_low, policy.snr_high))
    draw = AugmentDraw(kind, snr)
    if kind == "babble":
        lo, hi = policy.babble_k_range
        draw.k = int(rng.integers(lo, hi + 1))
    if bank is None:
        return draw

    def pick(source, n=1):
        ids = bank.get(source, [])
        if len(ids) < n:
            raise AugmentError(f"noise bank has {len(ids)} {source} clips, need {n}")
        return [ids[int(i)] for i in rng.choice(len(ids), size=n, replace=False)]

    if kind == "babble":
        draw.noise_ids = pick("babble", draw.k)
    elif kind == "television":
        draw.noise_ids = pick("music") + pick("babble")
    else:
        draw.noise_ids = pick(kind)
    return draw


def noise_bank(corpus: Corpus, split: str) -> dict:
    return {kind: corpus.noise_ids(split, kind) for kind in ("music", "ambient", "babble")}


def assemble_noise(corpus: Corpus, draw: AugmentDraw, rng: np.random.Generator) -> Waveform:
    clips = [corpus.noise(nid) for nid in draw.noise_ids]
    if draw.noise_type == "babble":
        return make_babble(clips, len(clips), rng)
    if draw.noise_type == "television":
        return make_television(clips[0], clips[1])
    return clips[0]


def segment_samples(frames: int, cfg: FbankConfig) -> int:
    """Samples needed for exactly `frames` analysis frames."""
    return (frames - 1) * cfg.hop_length + cfg.win_length


@dataclass
class PairSample:
    clean: FeatureMatrix
    noisy: FeatureMatrix
    speaker_index: int
    provenance: dict


def pair_rng(global_seed, epoch, step_index, utt_id):
    return derive_rng(global_seed, epoch, step_index, utt_id)


def crop_wave(w: Waveform, n: int | None, rng):
    if n is None or n >= len(w):
        return w, 0
    start = int(rng.integers(0, len(w) - n + 1))
    return Waveform(w.samples[start:start + n], w.sample_rate), start


def make_pair(utt_id, epoch, step_index, policy: AugmentPolicy, corpus: Corpus, global_seed,
              fbank: FbankConfig = FbankConfig(), segment_frames: int | None = None,
              noise_split: str = "train") -> PairSample:
    """Featurized (clean, noisy) views of one utterance with fresh noise for this step.

    All randomness comes from a stream keyed by ``(global_seed, epoch,
    step_index, utt_id)``, so any schedule or worker count gives the same pair.
    """
    if utt_id not in corpus.utts:
        raise CorpusError(f"unknown utterance {utt_id!r}")
    rng = pair_rng(global_seed, epoch, step_index, utt_id)
    seg_len = None if segment_frames is None else segment_samples(segment_frames, fbank)
    clean, offset = crop_wave(corpus.wave(utt_id), seg_len, rng)
    draw = draw_augmentation(policy, rng, noise_bank(corpus, noise_split))
    noise = assemble_noise(corpus, draw, rng)
    noisy = mix_at_snr(clean, noise, draw.snr_db, rng)
    spk = corpus.utts[utt_id].spk_id
    provenance = {"utt_id": utt_id, "epoch": epoch, "step": step_index,
                  "noise_type": draw.noise_type, "noise_ids": draw.noise_ids,
                  "snr_db": draw.snr_db, "crop_offset": offset}
    return PairSample(logmel(clean, fbank), logmel(noisy, fbank),
                      corpus.speaker_index.get(spk, -1), provenance)


class ProvenanceLog:
    """Append-only JSON-lines record of generated pairs."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a")

    def write(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @staticmethod
    def read(path):
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class OfflineEntry:
    noisy_id: str
    utt_id: str
    path: str
    provenance: dict


def make_offline_set(corpus: Corpus, policy: AugmentPolicy, copies_per_utt: int, seed: int,
                     out_dir) -> list:
    """Write fixed noisy copies of every training utterance (train noise split only).

    Produces ``offline.tsv`` (noisy_id, utt_id, path) and ``offline_provenance.jsonl``.
    """
    if copies_per_utt < 1:
        raise AugmentError("copies_per_utt must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    bank = noise_bank(corpus, "train")
    entries = []
    for utt_id in corpus.train_ids():
        clean = corpus.wave(utt_id)
        for c in range(copies_per_utt):
            rng = derive_rng(seed, "offline", utt_id, c)
            draw = draw_augmentation(policy, rng, bank)
            noisy = mix_at_snr(clean, assemble_noise(corpus, draw, rng), draw.snr_db, rng)
            noisy_id = f"{utt_id}-noisy{c}"
            rel = Path("wav") / f"{noisy_id}.wav"
            write_wav(noisy, out_dir / rel)
            prov = {"utt_id": utt_id, "copy": c, "noise_type": draw.noise_type,
                    "noise_ids": draw.noise_ids, "snr_db": draw.snr_db}
            entries.append(OfflineEntry(noisy_id, utt_id, str(rel), prov))
    with open(out_dir / "offline.tsv", "w") as fh:
        for e in entries:
            fh.write(f"{e.noisy_id}\t{e.utt_id}\t{e.path}\n")
    with ProvenanceLog(out_dir / "offline_provenance.jsonl") as log:
        for e in entries:
            log.write(dict(e.provenance, noisy_id=e.noisy_id))
    return entries


def read_offline_set(out_dir) -> dict:
    """Map utt_id -> list of absolute noisy WAV paths."""
    out_dir = Path(out_dir)
    copies = {}
    for line in (out_dir / "offline.tsv").read_text().splitlines():
        if line.strip():
            _, utt_id, rel = line.split("\t")
            copies.setdefault(utt_id, []).append(out_dir / rel)
    return copies
