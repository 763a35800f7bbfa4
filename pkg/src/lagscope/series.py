"""Multivariate time-series container, standardization, windowing and file I/O.

All operations are pure: they return new objects and never mutate their
inputs, so they are safe to call from multiple threads.

The lag/row convention used across the whole package is fixed here: in a
window of length tau, row p holds the observation at lag tau - p, i.e. lag 1
is the last row of the window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

SML_TARGET = "Temperature_Comedor_Sensor"
# Non-sensor columns of the SML2010 export: timestamps, the second indoor
# temperature (an alternative target, not an external sensor) and the
# calendar feature.
_SML_DROP = ("Date", "Time", "Temperature_Habitacion_Sensor", "Day_Of_Week")


@dataclass(frozen=True)
class MultivariateSeries:
    """T x N matrix of observations with per-variable names."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("empty input: series needs at least 1 row and 1 column")
        if not np.isfinite(values).all():
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(f"non-finite value at row {bad[0]} col {bad[1]}")
        if len(self.names) != values.shape[1]:
            raise ValueError(f"{len(self.names)} names for {values.shape[1]} columns")
        if len(set(self.names)) != len(self.names):
            raise ValueError("variable names must be unique")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowedSample:
    """One supervised sample: tau x N input window and scalar next value.

    Row p of ``input`` is the observation at lag tau - p relative to
    ``origin_t`` (lag 1 = last row).
    """

    input: np.ndarray
    target: float
    target_index: int
    origin_t: int


@dataclass
class SupervisedDataset:
    """Ordered windowed samples sharing one window length and target.

    ``inputs`` is (S, tau, N), ``targets`` is (S,), ``origins`` is (S,);
    samples are ordered by origin. ``inputs`` may be a strided view of the
    source series; treat it as read-only.
    """

    inputs: np.ndarray
    targets: np.ndarray
    origins: np.ndarray
    window: int
    target_index: int
    names: tuple[str, ...] = field(default_factory=tuple)

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, i) -> WindowedSample:
        return WindowedSample(
            input=self.inputs[i],
            target=float(self.targets[i]),
            target_index=self.target_index,
            origin_t=int(self.origins[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def standardize(series: MultivariateSeries):
    """Shift/scale each column to mean 0 and population std 1.

    Population (1/T) standard deviation is used. Zero-variance columns are
    set to all zeros and flagged by a 0 entry in the returned ``stds``
    (indices stay aligned with any ground-truth structure).

    Returns (standardized series, means, stds).
    """
    if series.T < 2:
        raise ValueError("standardize needs at least 2 rows")
    means = series.values.mean(axis=0)
    stds = series.values.std(axis=0)  # population (1/T) convention
    safe = np.where(stds > 0, stds, 1.0)
    out = (series.values - means) / safe
    return MultivariateSeries(out, series.names), means, stds


def make_windows(series: MultivariateSeries, target_index: int, window: int,
                 stride: int = 1) -> SupervisedDataset:
    """Slice a series into supervised (window, next value) samples.

    Emits one sample per origin t = window, window + stride, ..., T - 1; the
    input is rows t - window .. t - 1 and the target is column
    ``target_index`` at row t.
    """
    tau, T, N = int(window), series.T, series.N
    if tau < 1:
        raise ValueError("window must be >= 1")
    if tau >= T:
        raise ValueError(f"window exceeds series length ({tau} >= {T})")
    if not 0 <= target_index < N:
        raise ValueError(f"target index {target_index} out of range for {N} variables")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    origins = np.arange(tau, T, stride)
    # windows[s] = rows s .. s+tau-1, a zero-copy view of the series.
    windows = np.lib.stride_tricks.sliding_window_view(series.values, tau, axis=0)
    windows = windows.transpose(0, 2, 1)  # (T - tau + 1, tau, N)
    inputs = windows[origins - tau]
    targets = series.values[origins, target_index]
    return SupervisedDataset(
        inputs=inputs,
        targets=targets,
        origins=origins,
        window=tau,
        target_index=int(target_index),
        names=series.names,
    )


def split_train_test(dataset: SupervisedDataset, train_fraction: float):
    """Chronological split: first floor(fraction * len) samples are train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset)
    cut = int(train_fraction * n)
    if cut == 0 or cut == n:
        raise ValueError(f"split of {n} samples at fraction {train_fraction} leaves an empty partition")

    def piece(sl):
        return SupervisedDataset(
            inputs=dataset.inputs[sl],
            targets=dataset.targets[sl],
            origins=dataset.origins[sl],
            window=dataset.window,
            target_index=dataset.target_index,
            names=dataset.names,
        )

    return piece(slice(None, cut)), piece(slice(cut, None))


def load_csv(path, delimiter=",", has_header=True) -> MultivariateSeries:
    """Read a rectangular numeric CSV as a series (columns = variables).

    Row/column numbers in error messages are 1-based file coordinates
    (the header line counts as row 1 when present).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r]  # drop blank lines
    if not rows:
        raise ValueError("empty input")

    start = 0
    if has_header:
        names = [c.strip() for c in rows[0]]
        start = 1
    else:
        names = [f"v{i}" for i in range(len(rows[0]))]
    if len(rows) <= start:
        raise ValueError("empty input: no data rows")

    width = len(names)
    data = np.empty((len(rows) - start, width))
    for r, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ValueError(f"ragged row {r}: expected {width} cells, found {len(row)}")
        for c, cell in enumerate(row, start=1):
            try:
                data[r - start - 1, c - 1] = float(cell)
            except ValueError:
                raise ValueError(f"non-numeric cell {cell!r} at row {r} col {c}") from None
    return MultivariateSeries(data, names)


def save_csv(series: MultivariateSeries, path, delimiter=","):
    """Write a series as a headered CSV, round-tripping float64 exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(series.names)
        for row in series.values:
            writer.writerow([repr(float(v)) for v in row])


def load_sml2010(path):
    """Read an SML2010 export (whitespace-separated, '#'-prefixed header).

    The first two columns (date, time) and the non-external columns are
    dropped; the indoor temperature column is kept as the designated target.

    Returns (series, target_index).
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty input")

    header = lines[0]
    if header.startswith("#"):
        header = header[1:]
        body = lines[1:]
    else:
        body = lines[1:]
    # Header fields may carry "3:Name" style prefixes in some exports.
    names = [f.split(":", 1)[-1] for f in header.split()]
    if SML_TARGET not in names:
        raise ValueError(f"missing target column {SML_TARGET!r}")

    keep = [i for i, n in enumerate(names) if n not in _SML_DROP]
    kept_names = [names[i] for i in keep]

    data = np.empty((len(body), len(keep)))
    for r, line in enumerate(body, start=2):
        fields = line.split()
        if len(fields) != len(names):
            raise ValueError(f"ragged row {r}: expected {len(names)} fields, found {len(fields)}")
        for out_c, src_c in enumerate(keep):
            try:
                data[r - 2, out_c] = float(fields[src_c])
            except ValueError:
                raise ValueError(
                    f"non-numeric cell {fields[src_c]!r} at row {r} col {src_c + 1}"
                ) from None

    series = MultivariateSeries(data, kept_names)
    return series, kept_names.index(SML_TARGET)
