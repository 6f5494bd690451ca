"""Adaptive-sparsity training for time series forecasters.

PALS decides at every mask update whether to shrink, expand or keep the
network's sparse connectivity; GMP, GraNet and RigL are included as
fixed-schedule baselines. Models are small numpy forecasters with
hand-written backward passes.
"""
from .controllers import (
    Decision, PalsConfig, ControllerState, cosine_zeta, gmp_target, gmp_step, granet_step,
    make_controller, pals_apply, pals_decide, rigl_step,
)
from .data import (
    RawSeries, SplitSpec, WindowedDataset, chronological_split, load_csv, make_windows,
    standardize, synth_series,
)
from .harness import ExperimentConfig, ExperimentReport, evaluate, mae, mse, train
from .models import ModelConfig, build_model, count_flops, count_params, series_decompose
from .sparsity import (
    LayerMask, SparseLayerState, apply_mask, grow_count, init_mask, prune_fraction, snapshot,
)

__version__ = "0.1.0"

__all__ = [
    "ControllerState", "Decision", "PalsConfig", "cosine_zeta", "gmp_step", "gmp_target",
    "granet_step", "make_controller", "pals_apply", "pals_decide", "rigl_step",
    "RawSeries", "SplitSpec", "WindowedDataset", "chronological_split", "load_csv",
    "make_windows", "standardize", "synth_series",
    "ExperimentConfig", "ExperimentReport", "evaluate", "mae", "mse", "train",
    "ModelConfig", "build_model", "count_flops", "count_params", "series_decompose",
    "LayerMask", "SparseLayerState", "apply_mask", "grow_count", "init_mask", "prune_fraction",
    "snapshot",
]
