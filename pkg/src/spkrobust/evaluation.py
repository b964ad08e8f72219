"""Embedding extraction, cosine scoring, EER, minDCF, DET points and noisy test conditions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .features import FbankConfig, logmel
from .rng import derive_rng
from .signal import Waveform, make_babble, mix_at_snr
from .trials import ScoreSet, TrialError, TrialSet, pool_scores

P_TARGETS = (0.01, 0.001)
TEST_NOISES = ("babble", "music", "ambient")
TEST_SNRS = (0, 5, 10, 15, 20)


class EvalError(ValueError):
    pass


def cosine_score(e1, e2) -> float:
    a, b = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EvalError("cosine score of a zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _error_counts(scores: ScoreSet):
    """Miss and false-alarm counts at every distinct threshold, ascending, then +inf.

    A trial is accepted when its score is >= the threshold. Returns
    ``(thresholds, misses, false_alarms, n_target, n_nontarget)``.
    """
    tar, non = scores.split()
    tar, non = np.sort(tar), np.sort(non)
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    misses = np.searchsorted(tar, thresholds, side="left")
    false_alarms = non.size - np.searchsorted(non, thresholds, side="left")
    return thresholds, misses, false_alarms, tar.size, non.size


def _operating_points(scores: ScoreSet):
    thresholds, miss, fa, n_tar, n_non = _error_counts(scores)
    return thresholds, miss / n_tar, fa / n_non


def _eer_from_curve(p_miss, p_fa):
    """Crossing of P_miss and P_fa along an ordered vertex sequence, linearly interpolated."""
    d = p_miss - p_fa
    i = int(np.argmax(d >= 0))
    if d[i] == 0 or i == 0:
        return float(p_miss[i]), i
    s = d[i - 1] / (d[i - 1] - d[i])
    return float(p_fa[i - 1] + s * (p_fa[i] - p_fa[i - 1])), i


def compute_eer(scores: ScoreSet):
    """Equal error rate (fraction) and the threshold of the vertex where P_miss >= P_fa first holds.

    Evaluated in integer counts so the interpolated value is rounded only once.
    """
    thresholds, miss, fa, n_tar, n_non = _error_counts(scores)
    d = miss.astype(np.int64) * n_non - fa.astype(np.int64) * n_tar
    i = int(np.argmax(d >= 0))
    if d[i] == 0 or i == 0:
        return int(miss[i]) / n_tar, float(thresholds[i])
    d0, d1 = int(d[i - 1]), int(d[i])
    f0, f1 = int(fa[i - 1]), int(fa[i])
    eer = (f0 * (d0 - d1) + d0 * (f1 - f0)) / (n_non * (d0 - d1))
    return eer, float(thresholds[i])


def compute_min_dcf(scores: ScoreSet, p_target: float, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    """Minimum detection cost over thresholds, normalized by the best trivial system.

    The minimum is located in floating point and then re-evaluated exactly
    over the near-minimal thresholds, so the result is correctly rounded.
    """
    if not 0 < p_target < 1:
        raise EvalError("p_target must lie in (0, 1)")
    _, miss, fa, n_tar, n_non = _error_counts(scores)
    cost = c_miss * p_target * (miss / n_tar) + c_fa * (1 - p_target) * (fa / n_non)
    near = np.flatnonzero(cost <= cost.min() * (1 + 1e-9) + 1e-300)
    p, cm, cf = Fraction(p_target), Fraction(c_miss), Fraction(c_fa)
    best = min(cm * p * Fraction(int(miss[j]), n_tar) + cf * (1 - p) * Fraction(int(fa[j]), n_non)
               for j in near)
    return float(best / min(cm * p, cf * (1 - p)))


def average_min_dcf(scores: ScoreSet, p_targets=P_TARGETS) -> float:
    return float(np.mean([compute_min_dcf(scores, p) for p in p_targets]))


def det_points(scores: ScoreSet):
    """ROC staircase vertices as ``(p_fa, p_miss)`` sorted by increasing P_fa."""
    _, p_miss, p_fa = _operating_points(scores)
    return list(zip(p_fa[::-1].tolist(), p_miss[::-1].tolist()))


def eer_from_det(points) -> float:
    pts = np.asarray(points, dtype=np.float64)[::-1]
    return _eer_from_curve(pts[:, 1], pts[:, 0])[0]


def write_det(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p_fa", "p_miss"])
        for pfa, pm in points:
            w.writerow([f"{pfa:.9g}", f"{pm:.9g}"])


@dataclass(frozen=True)
class TestCondition:
    noise_type: str = "original"
    snr_db: float | None = None

    def __post_init__(self):
        if self.noise_type == "original":
            if self.snr_db is not None:
                raise EvalError("the original condition has no SNR")
        elif self.noise_type not in TEST_NOISES:
            raise EvalError(f"test noise must be one of {TEST_NOISES} or 'original'")
        elif self.snr_db is None:
            raise EvalError("a noisy condition needs an SNR")

    @property
    def name(self):
        if self.noise_type == "original":
            return "original"
        return f"{self.noise_type}:{self.snr_db:g}"

    @classmethod
    def parse(cls, text: str):
        """``original`` or ``TYPE:SNR`` (e.g. ``music:5``)."""
        if text == "original":
            return cls()
        try:
            kind, snr = text.split(":")
            return cls(kind, float(snr))
        except ValueError as exc:
            raise EvalError(f"bad condition {text!r}; expected TYPE:SNR") from exc


def table_conditions():
    return [TestCondition(k, float(s)) for k in TEST_NOISES for s in TEST_SNRS]


def corrupt(corpus: Corpus, utt_id: str, cond: TestCondition, seed: int) -> Waveform:
    """Test-split noise mixed at exactly ``cond.snr_db``; same audio for every system."""
    clean = corpus.wave(utt_id)
    if cond.noise_type == "original":
        return clean
    rng = derive_rng(seed, "condition", cond.noise_type, cond.snr_db, utt_id)
    ids = corpus.noise_ids("test", cond.noise_type)
    if not ids:
        raise EvalError(f"no test-split {cond.noise_type} noise")
    if cond.noise_type == "babble":
        k = int(rng.integers(3, 7))
        noise = make_babble([corpus.noise(i) for i in ids], min(k, len(ids)), rng)
    else:
        noise = corpus.noise(ids[int(rng.integers(0, len(ids)))])
    return mix_at_snr(clean, noise, cond.snr_db, rng)


def extract_embeddings(net, corpus: Corpus, utt_ids, condition: TestCondition = TestCondition(),
                       seed: int = 0, fbank: FbankConfig = FbankConfig(), batch_size: int = 32):
    """Eval-mode embeddings of full-length utterances, keyed by utterance id.

    Utterances with equal frame counts are batched; batch-norm running
    statistics make the result independent of batching.
    """
    feats = {u: logmel(corpus.wave(u) if condition.noise_type == "original"
                       else corrupt(corpus, u, condition, seed), fbank).values
             for u in utt_ids}
    by_len = {}
    for u in utt_ids:
        by_len.setdefault(feats[u].shape[0], []).append(u)
    out = {}
    for _, group in sorted(by_len.items()):
        for start in range(0, len(group), batch_size):
            chunk = group[start:start + batch_size]
            emb = net.embed(np.stack([feats[u] for u in chunk]), train=False)
            for u, e in zip(chunk, emb):
                out[u] = e.astype(np.float64)
    return out


def score_trials(embeddings: dict, trials: TrialSet) -> ScoreSet:
    missing = {u for u in trials.enroll + trials.test if u not in embeddings}
    if missing:
        raise EvalError(f"missing embeddings for {sorted(missing)[:5]}")
    e = np.stack([embeddings[u] for u in trials.enroll])
    t = np.stack([embeddings[u] for u in trials.test])
    ne, nt = np.linalg.norm(e, axis=1), np.linalg.norm(t, axis=1)
    if np.any(ne == 0) or np.any(nt == 0):
        raise EvalError("zero-norm embedding")
    return ScoreSet(trials, np.clip((e * t).sum(axis=1) / (ne * nt), -1.0, 1.0))


@dataclass
class MetricRow:
    condition: str
    snr: str
    eer: float
    dcf: float


def metric_row(cond_name: str, snr, scores: ScoreSet) -> MetricRow:
    eer, _ = compute_eer(scores)
    return MetricRow(cond_name, "" if snr is None else f"{snr:g}", eer, average_min_dcf(scores))


def evaluate_conditions(net, corpus: Corpus, trials: TrialSet, conditions=None, seed: int = 0,
                        fbank: FbankConfig = FbankConfig()):
    """Scores per condition plus metric rows, including the pooled ``all_noises`` row."""
    conditions = conditions if conditions is not None else [TestCondition()] + table_conditions()
    utts = sorted(set(trials.enroll) | set(trials.test))
    scores = {}
    rows = []
    for cond in conditions:
        emb = extract_embeddings(net, corpus, utts, cond, seed, fbank)
        scores[cond.name] = score_trials(emb, trials)
        rows.append(metric_row(cond.noise_type, cond.snr_db, scores[cond.name]))
    noisy = [scores[c.name] for c in conditions if c.noise_type != "original"]
    if noisy:
        rows.append(metric_row("all_noises", None, pool_scores(noisy)))
    return scores, rows


def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "snr", "eer", "dcf"])
        for r in rows:
            w.writerow([r.condition, r.snr, f"{r.eer:.9g}", f"{r.dcf:.9g}"])


def read_metrics(path):
    with open(path, newline="") as fh:
        return [MetricRow(r["condition"], r["snr"], float(r["eer"]), float(r["dcf"]))
                for r in csv.DictReader(fh)]


def dump_embeddings(entries, path):
    """Write ``utt_id spk_id v1 ... vp`` lines (9 significant digits).

    `entries` is an iterable of ``(utt_id, spk_id, vector)``; see :func:`tag_utt`.
    """
    entries = list(entries)
    if not entries:
        raise EvalError("nothing to dump")
    with open(path, "w") as fh:
        for utt_id, spk_id, vec in entries:
            vals = " ".join(f"{v:.9g}" for v in np.asarray(vec, dtype=np.float64))
            fh.write(f"{utt_id} {spk_id} {vals}\n")


def load_embedding_dump(path):
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            parts = line.split()
            out.append((parts[0], parts[1], np.array([float(v) for v in parts[2:]])))
    return out


def tag_utt(utt_id: str, condition: TestCondition) -> str:
    """Utterance id with a suffix naming its condition, e.g. ``u1#clean`` or ``u1#music5``."""
    if condition.noise_type == "original":
        return f"{utt_id}#clean"
    return f"{utt_id}#{condition.noise_type}{condition.snr_db:g}"


def read_embedding_map(path):
    return {u: v for u, _, v in load_embedding_dump(path)}


__all__ = [
    "EvalError", "MetricRow", "TestCondition", "TrialError", "average_min_dcf",
    "compute_eer", "compute_min_dcf", "corrupt", "cosine_score", "det_points",
    "dump_embeddings", "eer_from_det", "evaluate_conditions", "extract_embeddings",
    "load_embedding_dump", "metric_row", "read_embedding_map", "read_metrics",
    "score_trials", "table_conditions", "tag_utt", "write_det", "write_metrics",
]
