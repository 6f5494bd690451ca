"""Series ingestion, chronological splits, scaling and sliding windows."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, rng_stream


class DataError(ValueError):
    pass


@dataclass
class RawSeries:
    name: str
    values: np.ndarray  # (T, m)
    columns: list
    timestamps: list | None = None

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def n_vars(self):
        return self.values.shape[1]

    def univariate(self):
        """Keeps only the last variable, the usual target column."""
        return RawSeries(self.name, self.values[:, -1:].copy(),
                         self.columns[-1:], self.timestamps)


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.7
    test_ratio: float = 0.2
    ett_mode: bool = False

    def ratios(self):
        if self.ett_mode:
            return 0.6, 0.2
        return self.train_ratio, self.test_ratio


def load_csv(path, date_column=None):
    """Reads a header-first numeric CSV into a :class:`RawSeries`.

    A first column literally named ``date`` (or the column named by
    ``date_column``) is kept as timestamps and left out of the values.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path}: empty series")

    if date_column is None and header[0].strip().lower() == "date":
        date_column = header[0]
    if date_column is not None and date_column not in header:
        raise DataError(f"{path}: no column named {date_column!r}")
    date_idx = header.index(date_column) if date_column is not None else None
    keep = [j for j in range(len(header)) if j != date_idx]

    values = np.empty((len(body), len(keep)), dtype=DTYPE)
    stamps = [] if date_idx is not None else None
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} cells, "
                            f"header has {len(header)}")
        for out_j, j in enumerate(keep):
            try:
                values[i, out_j] = float(row[j])
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {row[j]!r} at "
                                f"row {i + 2}, column {j + 1} ({header[j]})") from None
        if stamps is not None:
            stamps.append(row[date_idx])
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: missing or non-finite values")
    name = os.path.splitext(os.path.basename(path))[0]
    return RawSeries(name, values, [header[j] for j in keep], stamps)


def chronological_split(n_obs, spec=SplitSpec(), min_len=None):
    """Returns (train, val, test) as half-open ``range`` objects.

    Train and test sizes are floored from their ratios; validation takes the
    remainder.
    """
    r_train, r_test = spec.ratios()
    if r_train <= 0 or r_test <= 0 or r_train + r_test >= 1:
        raise DataError(f"invalid split ratios train={r_train} test={r_test}")
    n_train = math.floor(r_train * n_obs)
    n_test = math.floor(r_test * n_obs)
    n_val = n_obs - n_train - n_test
    if min_len is not None and min(n_train, n_val, n_test) < min_len:
        raise DataError(f"segment too short: sizes {n_train}/{n_val}/{n_test} "
                        f"for window span {min_len}")
    return (range(0, n_train), range(n_train, n_train + n_val),
            range(n_train + n_val, n_obs))


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, x):
        return x * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=DTYPE), np.asarray(d["std"], dtype=DTYPE))


def fit_scaler(values, train_range):
    train = values[train_range.start:train_range.stop]
    if len(train) == 0:
        raise DataError("empty train segment")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Scaler(mean, std)


def standardize(values, train_range):
    """Z-scores every variable using train-segment statistics only."""
    scaler = fit_scaler(values, train_range)
    return scaler.transform(values), scaler


@dataclass(frozen=True)
class WindowedDataset:
    """Look-back/target pairs over one segment, in chronological order.

    ``starts[i]`` is the time index where target ``i`` begins; its look-back
    covers ``[starts[i] - lookback, starts[i])``.
    """

    segment: str
    values: np.ndarray  # full scaled series, shared with the other segments
    starts: np.ndarray
    lookback: int
    horizon: int

    def __len__(self):
        return len(self.starts)

    def batch(self, idx):
        """Returns (x, y) with shapes (b, L, m) and (b, H, m)."""
        starts = self.starts[idx]
        x = np.stack([self.values[s - self.lookback:s] for s in starts])
        y = np.stack([self.values[s:s + self.horizon] for s in starts])
        return x, y

    def batches(self, batch_size, rng=None):
        order = np.arange(len(self))
        if rng is not None:
            rng.shuffle(order)
        for i in range(0, len(order), batch_size):
            yield self.batch(order[i:i + batch_size])

    def n_batches(self, batch_size):
        return -(-len(self) // batch_size)


def make_windows(values, seg_range, lookback, horizon, segment="train"):
    """Cuts a segment into stride-1 windows.

    Training windows keep their look-back inside the segment. Validation and
    test windows may reach back into the preceding segment for context, so
    every target step in those segments is covered.
    """
    if lookback < 1 or horizon < 1:
        raise DataError("lookback and horizon must be >= 1")
    lo, hi = seg_range.start, seg_range.stop
    first = lo + lookback if segment == "train" else max(lo, lookback)
    last = hi - horizon
    if last < first:
        raise DataError(f"segment too short: {segment} segment [{lo}, {hi}) "
                        f"cannot hold L={lookback}, H={horizon}")
    starts = np.arange(first, last + 1)
    return WindowedDataset(segment, values, starts, lookback, horizon)


def synth_series(seed, T, m=1, period=24.0, trend_slope=0.0, noise_std=0.0, name="synth"):
    """Sine + linear trend + gaussian noise, one phase-shifted sine per variable."""
    if T < 1:
        raise DataError("T must be >= 1")
    rng = rng_stream(seed)
    t = np.arange(T, dtype=DTYPE)[:, None]
    phase = 2.0 * np.pi * np.arange(m, dtype=DTYPE)[None, :] / m
    # reducing t modulo the period keeps integer periods exactly periodic
    clean = np.sin(2.0 * np.pi * np.mod(t, period) / period + phase) + trend_slope * t
    noise = noise_std * rng.standard_normal((T, m))
    columns = [f"x{j}" for j in range(m)]
    return RawSeries(name, clean + noise, columns)


def write_csv(series, path):
    """Writes a series in the ingestion format, with an integer ``date`` column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + list(series.columns))
        stamps = series.timestamps or [str(i) for i in range(series.length)]
        for s, row in zip(stamps, series.values):
            w.writerow([s] + [repr(float(v)) for v in row])
