"""Noise-robust speaker embeddings trained with a within-sample variability-invariant loss."""

from .augment import AugmentPolicy, make_offline_set, make_pair
from .corpus import Corpus, build_corpus, build_trials
from .evaluation import (TestCondition, average_min_dcf, compute_eer, compute_min_dcf, det_points,
                         evaluate_conditions, extract_embeddings)
from .features import FbankConfig, logmel
from .kernels import BACKEND as KERNEL_BACKEND
from .network import NetConfig, SpeakerNet
from .signal import NoiseType, Waveform, mix_at_snr, read_wav, write_wav
from .training import TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy", "Corpus", "FbankConfig", "KERNEL_BACKEND", "NetConfig", "NoiseType",
    "SpeakerNet", "TestCondition", "TrainConfig", "Waveform", "average_min_dcf", "build_corpus",
    "build_trials", "compute_eer", "compute_min_dcf", "det_points", "evaluate_conditions",
    "extract_embeddings", "logmel", "make_offline_set", "make_pair", "mix_at_snr", "read_wav",
    "run_training", "write_wav",
]
