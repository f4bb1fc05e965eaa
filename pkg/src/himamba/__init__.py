"""Hierarchical Mamba image super-resolution on NumPy."""
from .config import PRESETS, HiMambaConfig, preset
from .network import (ModelWeights, count_flops, count_params, dahmg_forward, himamba_forward,
                      init_weights, param_shapes, zero_residual_branches)
from .scan import Direction, SelectiveParams, selective_scan
from .weightfile import load_weights, save_weights
from ._threads import set_threads, threads

__version__ = "0.1.0"

__all__ = [
    "HiMambaConfig", "PRESETS", "preset", "ModelWeights", "init_weights", "param_shapes",
    "zero_residual_branches", "himamba_forward", "dahmg_forward", "count_params", "count_flops",
    "Direction", "SelectiveParams", "selective_scan", "load_weights", "save_weights",
    "set_threads", "threads",
]
