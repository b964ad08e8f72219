"""Dual-loss training: an identification update followed by a within-sample update."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import (AugmentPolicy, crop_wave, make_pair, pair_rng, read_offline_set,
                      segment_samples)
from .corpus import Corpus
from .features import FbankConfig, logmel
from .losses import WITHIN_LOSSES, identification_loss_on, mse_within
from .network import NetConfig, NonFiniteError, SpeakerNet
from .rng import derive_rng
from .signal import Waveform, read_wav

logger = logging.getLogger(__name__)

MODES = ("clean", "offline", "online")
WITHIN = ("none", "mse", "cosine")


class TrainingError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 16
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.1
    milestones: tuple = (0.6, 0.8)       # fractions of the run
    within: str = "none"
    alpha: float = 1.0
    mode: str = "online"
    seed: int = 0
    segment_frames: int = 100
    anneal_base: float = 1000.0
    anneal_gamma: float = 0.12
    anneal_min: float = 5.0
    float64: bool = False

    def __post_init__(self):
        self.milestones = tuple(self.milestones)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.within not in WITHIN:
            raise ConfigError(f"within must be one of {WITHIN}")
        if self.within != "none" and self.mode == "clean":
            raise ConfigError("a within-sample loss needs clean/noisy pairs (mode offline or online)")
        if self.epochs < 1 or self.batch_size < 1 or self.segment_frames < 1:
            raise ConfigError("epochs, batch_size and segment_frames must be positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0 or self.alpha < 0:
            raise ConfigError("invalid optimizer hyperparameters")

    def lr_at(self, epoch: int) -> float:
        """Step decay: multiply by `lr_decay` at each milestone epoch (0-based epochs)."""
        passed = sum(epoch >= int(round(m * self.epochs)) for m in self.milestones)
        return self.lr * self.lr_decay ** passed

    def anneal_at(self, iteration: int) -> float:
        return max(self.anneal_min, self.anneal_base / (1.0 + self.anneal_gamma * iteration))


@dataclass
class EpochLog:
    epoch: int
    id_loss: float
    within_loss: float
    lr: float
    wall_time: float
    reference_mse: float | None = None


def sgd_update(param, grad, velocity, lr, momentum, weight_decay):
    """In-place SGD with momentum: ``v <- m v + g + wd p``; ``p <- p - lr v``."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError("parameter, gradient and velocity shapes differ")
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    param -= lr * velocity
    return param


class SGD:
    """Momentum SGD over a :class:`ParamStore`.

    Each `slot` keeps its own velocity, so the within-sample update does not
    replay the identification update's momentum.
    """

    def __init__(self, store, momentum=0.9, weight_decay=1e-4, slots=2):
        self.store = store
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [{name: np.zeros_like(p.value) for name, p in store} for _ in range(slots)]
        self.applications = 0

    def step(self, lr, slot=0):
        vel = self.velocity[slot]
        for name, p in self.store:
            sgd_update(p.value, p.grad, vel[name], lr, self.momentum, self.weight_decay)
        self.applications += 1


@dataclass
class StepMetrics:
    id_loss: float
    within_loss: float = 0.0
    updates: int = 1


def _stack(feats):
    return np.stack([f.values for f in feats])


def train_step(net: SpeakerNet, opt: SGD, batch, cfg: TrainConfig, lr: float,
               anneal: float = 0.0) -> StepMetrics:
    """One training step on a batch of :class:`PairSample` (clean mode: ``noisy`` is None).

    Update 1 applies the identification loss over every view in the batch;
    update 2 re-forwards the pairs through the updated parameters and applies
    ``alpha`` times the within-sample loss. Update 2 is skipped, leaving the
    optimizer state untouched, when its loss is exactly zero.
    """
    clean = _stack([p.clean for p in batch])
    labels = np.array([p.speaker_index for p in batch])
    if np.any(labels < 0):
        raise TrainingError("batch contains utterances without a training speaker label")
    paired = batch[0].noisy is not None
    if paired:
        x = np.concatenate([clean, _stack([p.noisy for p in batch])])
        y = np.concatenate([labels, labels])
    else:
        x, y = clean, labels

    net.store.zero_grad()
    emb = net.embed(x, train=True)
    idl = identification_loss_on(net, emb, y, train=True, anneal=anneal)
    if not math.isfinite(idl.value):
        raise NonFiniteError(f"identification loss is {idl.value}")
    net.backward_embed(idl.grads[0])
    opt.step(lr)
    metrics = StepMetrics(idl.value)

    if cfg.within == "none" or not paired or cfg.alpha == 0:
        return metrics
    net.store.zero_grad()
    emb = net.embed(x, train=True)
    b = clean.shape[0]
    wl = WITHIN_LOSSES[cfg.within](emb[:b], emb[b:])
    if not math.isfinite(wl.value):
        raise NonFiniteError(f"within-sample loss is {wl.value}")
    metrics.within_loss = wl.value
    if wl.value == 0.0:
        return metrics
    g_c, g_n = wl.grads
    net.backward_embed(cfg.alpha * np.concatenate([g_c, g_n]))
    opt.step(lr, slot=1)
    metrics.updates = 2
    return metrics


@dataclass
class CleanView:
    clean: object
    noisy: object
    speaker_index: int
    provenance: dict = field(default_factory=dict)


class BatchSource:
    """Builds the views for one training step according to the augmentation mode."""

    def __init__(self, corpus: Corpus, cfg: TrainConfig, fbank: FbankConfig,
                 policy: AugmentPolicy, offline_dir=None):
        self.corpus, self.cfg, self.fbank, self.policy = corpus, cfg, fbank, policy
        self.seg = segment_samples(cfg.segment_frames, fbank)
        self.offline = None
        if cfg.mode == "offline":
            if offline_dir is None:
                raise ConfigError("offline mode needs a pregenerated noisy set")
            self.offline = read_offline_set(offline_dir)
            self._offline_wavs = {}

    def _offline_wave(self, path):
        if path not in self._offline_wavs:
            self._offline_wavs[path] = read_wav(path)
        return self._offline_wavs[path]

    def view(self, utt_id, epoch, step):
        cfg = self.cfg
        if cfg.mode == "online":
            return make_pair(utt_id, epoch, step, self.policy, self.corpus, cfg.seed,
                             self.fbank, cfg.segment_frames)
        rng = pair_rng(cfg.seed, epoch, step, utt_id)
        spk = self.corpus.speaker_index[self.corpus.utts[utt_id].spk_id]
        wave = self.corpus.wave(utt_id)
        clean, offset = crop_wave(wave, self.seg, rng)
        if cfg.mode == "clean":
            return CleanView(logmel(clean, self.fbank), None, spk, {"crop_offset": offset})
        copies = self.offline.get(utt_id)
        if not copies:
            raise TrainingError(f"no offline noisy copy for {utt_id}")
        path = copies[int(rng.integers(0, len(copies)))]
        noisy = self._offline_wave(path)
        n = len(clean)
        seg = noisy.samples[offset:offset + n]
        return CleanView(logmel(clean, self.fbank), logmel(Waveform(seg, noisy.sample_rate), self.fbank),
                         spk, {"crop_offset": offset, "offline": str(path)})


def run_training(corpus: Corpus, cfg: TrainConfig, net_cfg: NetConfig | None = None,
                 fbank: FbankConfig = FbankConfig(), policy: AugmentPolicy | None = None,
                 offline_dir=None, provenance_log=None, progress=None):
    """Train a fresh network; returns ``(net, [EpochLog, ...])``.

    With ``provenance_log`` (a :class:`ProvenanceLog`) every online pair is recorded.
    """
    policy = policy or AugmentPolicy()
    n_classes = len(corpus.speaker_index)
    net_cfg = net_cfg or NetConfig(n_classes=n_classes)
    if net_cfg.n_classes != n_classes:
        raise ConfigError(f"net has {net_cfg.n_classes} classes, corpus has {n_classes} speakers")
    net = SpeakerNet(net_cfg, seed=cfg.seed, dtype=np.float64 if cfg.float64 else np.float32)
    opt = SGD(net.store, cfg.momentum, cfg.weight_decay)
    source = BatchSource(corpus, cfg, fbank, policy, offline_dir)
    train_ids = corpus.train_ids()
    logs = []
    iteration = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = derive_rng(cfg.seed, "order", epoch).permutation(len(train_ids))
        id_losses, within_losses = [], []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            utt_ids = [train_ids[i] for i in order[start:start + cfg.batch_size]]
            batch = [source.view(u, epoch, step) for u in utt_ids]
            if provenance_log is not None:
                for p in batch:
                    provenance_log.write(p.provenance)
            anneal = cfg.anneal_at(iteration) if net_cfg.head == "a-softmax" else 0.0
            try:
                m = train_step(net, opt, batch, cfg, lr, anneal)
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite values at epoch {epoch} step {step} (lr={lr}): {exc}") from exc
            id_losses.append(m.id_loss)
            within_losses.append(m.within_loss)
            iteration += 1
        log = EpochLog(epoch + 1, float(np.mean(id_losses)), float(np.mean(within_losses)),
                       lr, time.perf_counter() - t0)
        logs.append(log)
        logger.info("epoch %d: id %.4f within %.5f lr %.4g (%.1fs)", log.epoch, log.id_loss,
                    log.within_loss, lr, log.wall_time)
        if progress:
            progress(log)
    return net, logs


def write_epoch_logs(logs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "id_loss", "within_loss", "lr", "wall_time", "reference_mse"])
        for log in logs:
            ref = "" if log.reference_mse is None else f"{log.reference_mse:.9g}"
            w.writerow([log.epoch, f"{log.id_loss:.9g}", f"{log.within_loss:.9g}",
                        f"{log.lr:.9g}", f"{log.wall_time:.3f}", ref])


def read_epoch_logs(path):
    logs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ref = row["reference_mse"]
            logs.append(EpochLog(int(row["epoch"]), float(row["id_loss"]), float(row["within_loss"]),
                                 float(row["lr"]), float(row["wall_time"]),
                                 float(ref) if ref else None))
    return logs


def paired_eval_set(corpus: Corpus, policy: AugmentPolicy | None = None, seed: int = 0,
                    fbank: FbankConfig = FbankConfig(), split: str = "test",
                    segment_frames: int | None = None):
    """Fixed clean/noisy pairs for measuring embedding drift, one per utterance of `split`."""
    policy = policy or AugmentPolicy()
    ids = corpus.test_ids() if split == "test" else corpus.train_ids()
    return [make_pair(u, -1, 0, policy, corpus, seed, fbank, segment_frames, noise_split=split)
            for u in ids]


def reference_mse(net: SpeakerNet, pairs, batch_size: int = 32) -> float:
    """Mean within-sample MSE between eval-mode embeddings of each clean/noisy pair."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    total, count = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        shapes = {p.clean.values.shape for p in chunk}
        groups = [chunk] if len(shapes) == 1 else [[p] for p in chunk]
        for g in groups:
            f_c = net.embed(_stack([p.clean for p in g]), train=False)
            f_n = net.embed(_stack([p.noisy for p in g]), train=False)
            total += mse_within(f_c, f_n).value * len(g)
            count += len(g)
    return total / count


def train_config_dict(cfg: TrainConfig):
    return asdict(cfg)
