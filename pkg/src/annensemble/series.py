"""Time-series containers, transforms, chronological splits, lag windows and
error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "TimeSeries",
    "SplitSpec",
    "TransformSpec",
    "PatternSet",
    "ErrorTriple",
    "SeriesError",
    "load_csv",
    "apply_transform",
    "invert_transform",
    "invert_values",
    "split",
    "window",
    "metrics",
]


class SeriesError(ValueError):
    """Raised for malformed data, invalid transforms or impossible splits."""


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TransformSpec:
    """A reversible elementwise transform.

    ``kind`` is ``"log10"`` or ``"rescale"``. A rescale maps the source
    interval ``[src_min, src_max]`` linearly onto ``[lo, hi]``.
    """

    kind: str
    src_min: Optional[float] = None
    src_max: Optional[float] = None
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("log10", "rescale"):
            raise SeriesError(f"unknown transform kind {self.kind!r}")
        if self.kind == "rescale":
            if self.src_min is None or self.src_max is None:
                raise SeriesError("rescale needs src_min and src_max")
            if not self.src_max > self.src_min:
                raise SeriesError(
                    f"zero-width source range [{self.src_min}, {self.src_max}]")
            if not self.hi > self.lo:
                raise SeriesError(f"empty target range [{self.lo}, {self.hi}]")

    @classmethod
    def rescale_from(cls, values, lo: float = 0.0, hi: float = 1.0) -> "TransformSpec":
        """Rescale whose source range is the min/max of ``values``."""
        values = np.asarray(values, dtype=float)
        return cls("rescale", float(values.min()), float(values.max()), lo, hi)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "log10":
            if np.any(x <= 0):
                bad = int(np.flatnonzero(x <= 0)[0])
                raise SeriesError(
                    f"log10 needs positive values; got {x.flat[bad]} at index {bad}")
            return np.log10(x)
        scale = (self.hi - self.lo) / (self.src_max - self.src_min)
        return self.lo + (x - self.src_min) * scale

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "log10":
            return np.power(10.0, y)
        scale = (self.src_max - self.src_min) / (self.hi - self.lo)
        return self.src_min + (y - self.lo) * scale

    def to_dict(self) -> dict:
        if self.kind == "log10":
            return {"kind": "log10"}
        return {"kind": "rescale", "src_min": self.src_min, "src_max": self.src_max,
                "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TimeSeries:
    """Ordered real observations plus the transforms applied so far.

    ``values`` is read-only; every operation returns a new series.
    """

    values: np.ndarray
    name: str = "series"
    transform_log: tuple = ()

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise SeriesError(f"series {self.name!r} must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise SeriesError(f"series {self.name!r} contains non-finite values")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "transform_log", tuple(self.transform_log))

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values, name: Optional[str] = None) -> "TimeSeries":
        return TimeSeries(values, name or self.name, self.transform_log)

    def raw(self) -> np.ndarray:
        """Values with every logged transform undone."""
        return invert_values(self.values, self.transform_log)


@dataclass(frozen=True)
class SplitSpec:
    train_len: int
    validation_len: int
    test_len: int

    def __post_init__(self):
        for f in ("train_len", "validation_len", "test_len"):
            if int(getattr(self, f)) < 1:
                raise SeriesError(f"{f} must be >= 1, got {getattr(self, f)}")

    @property
    def total(self) -> int:
        return self.train_len + self.validation_len + self.test_len


@dataclass(frozen=True)
class PatternSet:
    """Input/target pairs built from a sliding window.

    ``inputs`` has shape (n, p) and ``targets`` shape (n, q).
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = _frozen_array(self.inputs)
        t = _frozen_array(self.targets)
        if x.ndim != 2 or t.ndim != 2 or x.shape[0] != t.shape[0]:
            raise SeriesError(
                f"inputs {x.shape} and targets {t.shape} are not aligned 2-D arrays")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", t)

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @property
    def q(self) -> int:
        return self.targets.shape[1]

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class ErrorTriple:
    mae: float
    mse: float
    mape: float  # percent

    @property
    def total(self) -> float:
        return self.mae + self.mse + self.mape

    def as_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "mape": self.mape}


def _parse_float(text: str, row: int, path) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SeriesError(f"{path}: row {row}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise SeriesError(f"{path}: row {row}: non-finite value {text!r}")
    return value


def load_csv(path) -> TimeSeries:
    """Read a one-observation-per-line CSV.

    Accepts an optional single header line and an optional leading date
    column (``date,value``). A single trailing blank line is tolerated; any
    other blank row is an error.
    """
    path = Path(path)
    if not path.is_file():
        raise SeriesError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and not any(c.strip() for c in rows[-1]):
        rows = rows[:-1]
    values = []
    for i, cells in enumerate(rows, start=1):
        cells = [c.strip() for c in cells]
        if not any(cells):
            raise SeriesError(f"{path}: row {i}: blank row")
        if len(cells) > 2:
            raise SeriesError(f"{path}: row {i}: expected 1 or 2 columns, got {len(cells)}")
        text = cells[-1]
        if i == 1:
            try:
                float(text)
            except ValueError:
                continue  # header
        values.append(_parse_float(text, i, path))
    if not values:
        raise SeriesError(f"{path}: no observations")
    return TimeSeries(values, name=path.stem)


def apply_transform(series: TimeSeries, spec: TransformSpec) -> TimeSeries:
    return TimeSeries(spec.forward(series.values), series.name,
                      series.transform_log + (spec,))


def invert_transform(series: TimeSeries, spec: TransformSpec) -> TimeSeries:
    """Undo ``spec``, which must be the most recent entry of the log."""
    if not series.transform_log:
        raise SeriesError("transform log is empty; nothing to invert")
    if series.transform_log[-1] != spec:
        raise SeriesError(
            f"cannot invert {spec}; last applied transform is {series.transform_log[-1]}")
    return TimeSeries(spec.inverse(series.values), series.name, series.transform_log[:-1])


def invert_values(values, transforms: Sequence[TransformSpec]) -> np.ndarray:
    """Undo ``transforms`` (in application order) on a bare array."""
    out = np.asarray(values, dtype=float)
    for spec in reversed(tuple(transforms)):
        out = spec.inverse(out)
    return out


def split(series: TimeSeries, spec: SplitSpec):
    """Chronological (train, validation, test) segments."""
    n = len(series)
    if spec.total != n:
        raise SeriesError(
            f"train_len + validation_len + test_len = {spec.total} "
            f"({spec.train_len} + {spec.validation_len} + {spec.test_len}) "
            f"but the series has {n} values")
    a = spec.train_len
    b = a + spec.validation_len
    v = series.values
    return (series.with_values(v[:a]), series.with_values(v[a:b]),
            series.with_values(v[b:]))


def window(series, p: int, q: int = 1) -> PatternSet:
    """Stride-1 lag windows: ``p`` inputs followed by ``q`` targets.

    Yields ``N - p - q + 1`` patterns (``N - p`` when ``q == 1``).
    """
    y = series.values if isinstance(series, TimeSeries) else np.asarray(series, float)
    if p < 1 or q < 1:
        raise SeriesError(f"p and q must be >= 1 (got p={p}, q={q})")
    n = y.size
    if n < p + q:
        raise SeriesError(f"series of length {n} too short for p={p}, q={q}")
    blocks = np.lib.stride_tricks.sliding_window_view(y, p + q)
    return PatternSet(blocks[:, :p].copy(), blocks[:, p:].copy())


def metrics(actual, forecast) -> ErrorTriple:
    """MAE, MSE and MAPE (in percent), all with 1/n normalisation."""
    y = np.asarray(actual, dtype=float).ravel()
    f = np.asarray(forecast, dtype=float).ravel()
    if y.size != f.size:
        raise SeriesError(f"length mismatch: {y.size} actual vs {f.size} forecast")
    if y.size == 0:
        raise SeriesError("cannot score empty sequences")
    if np.any(y == 0):
        raise SeriesError("MAPE undefined: actual series contains zeros")
    e = y - f
    return ErrorTriple(
        mae=float(np.mean(np.abs(e))),
        mse=float(np.mean(e * e)),
        mape=float(np.mean(np.abs(e / y)) * 100.0),
    )
