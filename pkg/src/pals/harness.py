"""Training loop, metrics, early stopping, experiment configs and reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import checkpoint_dict, save_checkpoint
from .controllers import PalsConfig, make_controller
from .data import (
    SplitSpec, chronological_split, load_csv, make_windows, standardize, synth_series,
)
from .models import ModelConfig, build_model, count_flops, count_params
from .numerics import AdamState, DimensionError, adam_step, rng_stream
from .sparsity import LayerMask, snapshot

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# -- metrics ---------------------------------------------------------------

def _check_same_shape(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target):
    pred, target = _check_same_shape(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target):
    pred, target = _check_same_shape(pred, target)
    return float(np.mean(np.abs(pred - target)))


@dataclass(frozen=True)
class Metric:
    mse: float
    mae: float


# -- configuration ---------------------------------------------------------

@dataclass
class DataConfig:
    path: str | None = None
    date_column: str | None = None
    synth: dict | None = None
    train_ratio: float = 0.7
    test_ratio: float = 0.2
    ett_mode: bool = False
    univariate: bool = False


@dataclass
class ControllerConfig:
    kind: str = "dense"
    gamma: float = 1.2
    lam: float = 1.1
    zeta0: float = 0.5
    delta_t: int = 20
    s_min: float = 0.2
    s_max: float = 0.9
    d_init: float = 1.0
    target_sparsity: float = 0.5

    def pals(self):
        return PalsConfig(gamma=self.gamma, lam=self.lam, zeta0=self.zeta0,
                          delta_t=self.delta_t, s_min=self.s_min, s_max=self.s_max,
                          d_init=self.d_init)


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    patience: int = 3
    val_batches: int | None = None
    shuffle: bool = False
    eval_batch_size: int = 1024

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.data.path is None and self.data.synth is None:
            raise ValueError("config needs either data.path or data.synth")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sections = {"data": DataConfig, "model": ModelConfig, "controller": ControllerConfig}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                _reject_unknown(sections[key], value, key)
                kwargs[key] = sections[key](**value)
            elif key in {f.name for f in dataclasses.fields(cls)}:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)

    def replace(self, **overrides):
        """Copy with dotted overrides, e.g. ``replace(**{"controller.lam": 1.2})``."""
        d = self.to_dict()
        for dotted, value in overrides.items():
            node = d
            *parents, leaf = dotted.split(".")
            for p in parents:
                if node.get(p) is None:
                    node[p] = {}
                node = node[p]
            node[leaf] = value
        return ExperimentConfig.from_dict(d)


def _reject_unknown(cls, values, section):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown key(s) in [{section}]: {sorted(unknown)}")


def load_config(path):
    """Reads a TOML experiment file; top-level keys plus [data], [model], [controller]."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        d = tomllib.load(fh)
    cfg_dir = os.path.dirname(os.path.abspath(path))
    data = d.get("data", {})
    if data.get("path") and not os.path.isabs(data["path"]):
        data["path"] = os.path.join(cfg_dir, data["path"])
    return ExperimentConfig.from_dict(d)


# -- data preparation ------------------------------------------------------

@dataclass
class PreparedData:
    name: str
    columns: list
    values: np.ndarray
    scaler: object
    ranges: tuple
    train: object
    val: object
    test: object


def prepare_data(cfg, scaler=None):
    """Loads or synthesizes the series, splits, scales, and windows it."""
    dc = cfg.data
    if dc.path is not None:
        series = load_csv(dc.path, dc.date_column)
    else:
        series = synth_series(**dc.synth)
    if dc.univariate:
        series = series.univariate()
    L, H = cfg.model.lookback, cfg.model.horizon
    ranges = chronological_split(series.length, SplitSpec(dc.train_ratio, dc.test_ratio, dc.ett_mode),
                                 min_len=H)
    if scaler is None:
        values, scaler = standardize(series.values, ranges[0])
    else:
        values = scaler.transform(series.values)
    windows = [make_windows(values, r, L, H, seg)
               for r, seg in zip(ranges, ("train", "val", "test"))]
    return PreparedData(series.name, series.columns, values, scaler, ranges, *windows)


def dataset_loss(model, ds, batch_size, max_batches=None):
    """Mean MSE and MAE over (a prefix of) a windowed segment."""
    sq = ab = 0.0
    n = 0
    for i, (x, y) in enumerate(ds.batches(batch_size)):
        if max_batches is not None and i >= max_batches:
            break
        err = model.predict(x) - y
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
        n += err.size
    return Metric(sq / n, ab / n)


# -- training --------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: dict
    dataset: dict
    epochs: list
    epochs_run: int
    best_epoch: int
    test: dict
    final_sparsity: float
    checkpoint_sparsity: float
    per_layer_density: dict
    params: dict
    flops: dict
    decisions: dict
    n_updates: int
    metric_scale: str = "standardized"
    wall_time_s: float = 0.0
    trace: list = field(default_factory=list, repr=False)
    model: object = field(default=None, repr=False, compare=False)
    data: object = field(default=None, repr=False, compare=False)

    def to_dict(self, include_wall_time=True):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("trace", "model", "data")}
        if not include_wall_time:
            d.pop("wall_time_s")
        return d

    def to_json(self, include_wall_time=True):
        return json.dumps(self.to_dict(include_wall_time), sort_keys=True, indent=2)


def train(cfg):
    """Runs one experiment and returns its :class:`ExperimentReport`.

    Every ``delta_t`` optimizer steps the controller updates the masks (the
    dense controller only records). Validation loss is checked after each
    epoch; training stops after ``patience`` epochs without improvement and the
    test metrics come from the best-validation checkpoint.
    """
    started = time.perf_counter()
    rng = rng_stream(cfg.seed)
    data = prepare_data(cfg)
    mcfg = dataclasses.replace(cfg.model, n_vars=data.values.shape[1])
    model = build_model(mcfg, rng)

    adam = AdamState(lr=cfg.lr)
    n_batches = data.train.n_batches(cfg.batch_size)
    t_max = cfg.epochs * n_batches
    cc = cfg.controller
    controller = make_controller(cc.kind, t_max, adam, pals=cc.pals(), delta_t=cc.delta_t,
                                 target_sparsity=cc.target_sparsity, zeta0=cc.zeta0)
    controller.init_masks(model.layers, rng)
    model.apply_masks()

    def val_loss():
        return dataset_loss(model, data.val, cfg.batch_size, cfg.val_batches).mse

    shuffle_rng = rng_stream(cfg.seed + 1) if cfg.shuffle else None
    trace, epochs = [], []
    best_val, best_state, best_epoch, wait = math.inf, None, -1, 0
    t = 0
    for epoch in range(cfg.epochs):
        losses = []
        for x, y in data.train.batches(cfg.batch_size, shuffle_rng):
            pred = model.forward(x)
            diff = pred - y
            loss = float(np.mean(diff * diff))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, iteration {t + 1}")
            losses.append(loss)
            grads = model.backward(2.0 * diff / diff.size)
            adam_step(model.params, grads, adam)
            model.apply_masks()
            t += 1
            if controller.due(t):
                rec = controller.update(t, model.layers, val_loss)
                rec["epoch"] = epoch
                trace.append(rec)
        v = dataset_loss(model, data.val, cfg.eval_batch_size).mse
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss after epoch {epoch}")
        epochs.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": v,
                       "sparsity": snapshot(model.layers).global_sparsity})
        log.info("epoch %d train %.5f val %.5f S %.3f", epoch, epochs[-1]["train_loss"], v,
                 epochs[-1]["sparsity"])
        if v < best_val:
            best_val, best_state, best_epoch, wait = v, model.state_dict(), epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break

    final_sparsity = snapshot(model.layers).global_sparsity
    model.load_state_dict(best_state)
    model.apply_masks()
    test = dataset_loss(model, data.test, cfg.eval_batch_size)
    snap = snapshot(model.layers)
    dense_model_flops = _dense_flops(model, len(data.test))

    report = ExperimentReport(
        config=cfg.to_dict(),
        dataset={"name": data.name, "length": int(data.values.shape[0]),
                 "n_vars": int(data.values.shape[1]),
                 "segments": [[r.start, r.stop] for r in data.ranges],
                 "windows": {"train": len(data.train), "val": len(data.val),
                             "test": len(data.test)}},
        epochs=epochs,
        epochs_run=len(epochs),
        best_epoch=best_epoch,
        test={"mse": test.mse, "mae": test.mae},
        final_sparsity=final_sparsity,
        checkpoint_sparsity=snap.global_sparsity,
        per_layer_density=dict(snap.per_layer),
        params={"total": count_params(model), "nonzero": count_params(model, nonzero_only=True)},
        flops={"per_sample": model.flops_per_sample(),
               "test_total": count_flops(model, len(data.test)),
               "dense_test_total": dense_model_flops},
        decisions=dict(sorted(Counter(r["decision"] for r in trace).items())),
        n_updates=len(trace),
        wall_time_s=time.perf_counter() - started,
        trace=trace,
        model=model,
        data=data,
    )
    return report


def _dense_flops(model, n_samples):
    saved = [l.mask for l in model.layers]
    for l in model.layers:
        l.mask = LayerMask(np.ones(l.weights.shape, bool))
    try:
        return count_flops(model, n_samples)
    finally:
        for l, m in zip(model.layers, saved):
            l.mask = m


def evaluate(model, ds, batch_size=1024):
    """Metrics, FLOPs and parameter counts of ``model`` over every window of ``ds``."""
    c = model.config
    if ds.values.shape[1] != c.n_vars or ds.lookback != c.lookback or ds.horizon != c.horizon:
        raise DimensionError(
            f"checkpoint expects L={c.lookback}, H={c.horizon}, m={c.n_vars}; dataset has "
            f"L={ds.lookback}, H={ds.horizon}, m={ds.values.shape[1]}")
    metric = dataset_loss(model, ds, batch_size)
    return {"segment": ds.segment, "mse": metric.mse, "mae": metric.mae,
            "n_windows": len(ds), "flops": count_flops(model, len(ds)),
            "params": count_params(model), "nonzero_params": count_params(model, True),
            "sparsity": snapshot(model.layers).global_sparsity}


# -- outputs ---------------------------------------------------------------

def write_predictions(path, model, ds, columns):
    """Test predictions on non-overlapping windows (stride H), one row per point.

    ``index`` is the absolute time index; values are on the standardized scale.
    """
    starts_idx = np.arange(0, len(ds), ds.horizon)
    x, y = ds.batch(starts_idx)
    pred = model.predict(x, batch_size=1024)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "variable", "y_true", "y_pred"])
        for wi, s in enumerate(ds.starts[starts_idx]):
            for h in range(ds.horizon):
                for j, col in enumerate(columns):
                    w.writerow([int(s) + h, col, repr(float(y[wi, h, j])),
                                repr(float(pred[wi, h, j]))])


def write_outputs(report, out_dir):
    """Writes report.json, trace.jsonl, predictions.csv and checkpoint.json."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("report.json", "trace.jsonl", "predictions.csv", "checkpoint.json")}
    with open(paths["report.json"], "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(paths["trace.jsonl"], "w", encoding="utf-8") as fh:
        for rec in report.trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if report.model is not None:
        write_predictions(paths["predictions.csv"], report.model, report.data.test,
                          report.data.columns)
        save_checkpoint(paths["checkpoint.json"], report.model, report.data.scaler,
                        extra={"experiment": report.config})
    return paths


__all__ = [
    "ControllerConfig", "DataConfig", "ExperimentConfig", "ExperimentReport", "Metric",
    "TrainingError", "checkpoint_dict", "dataset_loss", "evaluate", "load_config", "mae",
    "mse", "prepare_data", "train", "write_outputs", "write_predictions",
]
