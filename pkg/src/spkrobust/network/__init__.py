"""Residual speaker-embedding network with a hand-written reverse pass."""

from .layers import (BatchNorm, Conv2d, Dropout, GlobalStatsPool, Linear, ReLU,
                     ResidualBlock, ShapeError, gsp, gsp_backward, gsp_forward)
from .model import (NetConfig, NonFiniteError, SpeakerNet, shape_trace,
                    symbolic_shape_trace)
from .params import (CheckpointError, Param, ParamStore, load_checkpoint,
                     save_checkpoint)

__all__ = [
    "BatchNorm", "CheckpointError", "Conv2d", "Dropout", "GlobalStatsPool",
    "Linear", "NetConfig", "NonFiniteError", "Param", "ParamStore", "ReLU",
    "ResidualBlock", "ShapeError", "SpeakerNet", "gsp", "gsp_backward",
    "gsp_forward", "load_checkpoint", "save_checkpoint", "shape_trace",
    "symbolic_shape_trace",
]
