"""Versioned JSON checkpoints: model config, parameters, mask bitsets, scaler.

Floats are written with ``repr`` precision, which round-trips float64 exactly.
"""
from __future__ import annotations

import json

import numpy as np

from .data import Scaler
from .models import ModelConfig, build_model
from .numerics import DTYPE, rng_stream
from .sparsity import LayerMask

FORMAT = "pals-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_dict(model, scaler=None, extra=None):
    return {
        "format": FORMAT,
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in model.params.items()},
        "masks": {l.name: {"shape": list(l.mask.shape), "bits": l.mask.to_hex()}
                  for l in model.layers},
        "scaler": scaler.to_dict() if scaler is not None else None,
        "extra": extra or {},
    }


def save_checkpoint(path, model, scaler=None, extra=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(model, scaler, extra), fh)


def model_from_dict(d):
    """Rebuilds (model, scaler, extra) from a checkpoint dict."""
    if d.get("format") != FORMAT:
        raise CheckpointError("not a pals checkpoint")
    if d.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
    cfg = dict(d["model_config"])
    cfg["hidden"] = tuple(cfg.get("hidden", ()))
    model = build_model(ModelConfig(**cfg), rng_stream(0))
    if set(d["params"]) != set(model.params):
        raise CheckpointError("checkpoint parameters do not match the model layout")
    for name, entry in d["params"].items():
        arr = np.asarray(entry["data"], dtype=DTYPE).reshape(entry["shape"])
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, "
                                  f"expected {model.params[name].shape}")
        model.params[name][...] = arr
    for layer in model.layers:
        entry = d["masks"][layer.name]
        layer.mask = LayerMask.from_hex(entry["bits"], tuple(entry["shape"]))
    scaler = Scaler.from_dict(d["scaler"]) if d.get("scaler") else None
    return model, scaler, d.get("extra", {})


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
