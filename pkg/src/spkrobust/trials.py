"""Verification trial lists and aligned score sets, with their text formats."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABELS = ("target", "nontarget")


class TrialError(ValueError):
    pass


@dataclass
class TrialSet:
    labels: list = field(default_factory=list)   # "target" / "nontarget"
    enroll: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.labels) == len(self.enroll) == len(self.test)):
            raise TrialError("trial columns have different lengths")
        bad = set(self.labels) - set(LABELS)
        if bad:
            raise TrialError(f"unknown trial labels {sorted(bad)}")

    def __len__(self):
        return len(self.labels)

    @property
    def is_target(self) -> np.ndarray:
        return np.array([lab == "target" for lab in self.labels], dtype=bool)

    def validate(self):
        tgt = self.is_target
        if not tgt.any() or tgt.all():
            raise TrialError("a trial set needs at least one target and one nontarget trial")

    def write(self, path):
        with open(path, "w") as fh:
            for lab, e, t in zip(self.labels, self.enroll, self.test):
                fh.write(f"{lab} {e} {t}\n")

    @classmethod
    def read(cls, path):
        labels, enroll, test = [], [], []
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TrialError(f"{path}:{n}: expected 'label enroll test'")
            labels.append(parts[0])
            enroll.append(parts[1])
            test.append(parts[2])
        return cls(labels, enroll, test)


@dataclass
class ScoreSet:
    trials: TrialSet
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.trials),):
            raise TrialError("scores must align one-to-one with trials")
        if not np.all(np.isfinite(self.scores)):
            raise TrialError("scores must be finite")

    @classmethod
    def from_arrays(cls, target_scores, nontarget_scores):
        tar = np.asarray(target_scores, dtype=np.float64).ravel()
        non = np.asarray(nontarget_scores, dtype=np.float64).ravel()
        labels = ["target"] * tar.size + ["nontarget"] * non.size
        ids = [f"t{i}" for i in range(len(labels))]
        return cls(TrialSet(labels, ids, list(ids)), np.concatenate([tar, non]))

    def split(self):
        """``(target_scores, nontarget_scores)``; raises if either class is missing."""
        self.trials.validate()
        mask = self.trials.is_target
        return self.scores[mask], self.scores[~mask]

    def write(self, path):
        with open(path, "w") as fh:
            for lab, e, t, s in zip(self.trials.labels, self.trials.enroll, self.trials.test, self.scores):
                fh.write(f"{lab} {e} {t} {s:.9g}\n")

    @classmethod
    def read(cls, path):
        labels, enroll, test, scores = [], [], [], []
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise TrialError(f"{path}:{n}: expected 'label enroll test score'")
            labels.append(parts[0])
            enroll.append(parts[1])
            test.append(parts[2])
            scores.append(float(parts[3]))
        return cls(TrialSet(labels, enroll, test), np.array(scores))


def pool_scores(score_sets) -> ScoreSet:
    """Concatenate several score sets into one (e.g. all noisy conditions)."""
    labels, enroll, test, scores = [], [], [], []
    for s in score_sets:
        labels += s.trials.labels
        enroll += s.trials.enroll
        test += s.trials.test
        scores.append(s.scores)
    return ScoreSet(TrialSet(labels, enroll, test), np.concatenate(scores))
