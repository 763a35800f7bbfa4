"""Learned binary masks: which (lag row, variable) cells a trained model needs.

A soft mask in (0,1) is optimized against a frozen model over the held-out
windows, binarized by threshold grid search, and read out as per-variable lag
sets. Row p of a mask addresses lag (window - p): lag 1 is the last row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))  # 0.05 .. 0.95


@dataclass(frozen=True)
class LbmConfig:
    """Mask-learning schedule and loss weights.

    ``steps`` counts passes over the held-out windows; each pass applies one
    Adam update per mini-batch (so it is exactly one update per step when the
    windows fit in a single batch). ``lambda1`` weights the mask's L1 total,
    ``lambda2`` the consistency term tying the soft mask to its own
    binarization (averaged over cells), ``lambda3`` the cell count during
    threshold search. Restarts re-run the soft phase from independent
    initializations and average the resulting masks.
    """

    lambda1: float = 0.005
    lambda2: float = 0.5
    lambda3: float = 0.0001
    steps: int = 20
    mask_learning_rate: float = 0.1
    threshold_grid: tuple = DEFAULT_GRID
    batch_size: int = 256
    restarts: int = 1

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be >= 0")
        grid = tuple(self.threshold_grid)
        object.__setattr__(self, "threshold_grid", grid)
        if not grid:
            raise ValueError("threshold grid must be nonempty")
        if list(grid) != sorted(grid) or grid[0] <= 0 or grid[-1] >= 1:
            raise ValueError("threshold grid must be sorted inside (0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


# Published weight presets for the two synthetic regimes.
LINEAR_PRESET = LbmConfig(lambda1=0.005, lambda2=0.5, lambda3=0.0001)
NONLINEAR_PRESET = LbmConfig(lambda1=0.0005, lambda2=0.5, lambda3=0.00001)

PRESETS = {"linear": LINEAR_PRESET, "nonlinear": NONLINEAR_PRESET}


@dataclass(frozen=True)
class ImportanceMask:
    """Soft mask, its binarization, and the threshold that produced it."""

    soft: np.ndarray
    binary: np.ndarray
    threshold: float

    def __post_init__(self):
        soft = np.asarray(self.soft, dtype=np.float64)
        binary = np.asarray(self.binary, dtype=np.int8)
        object.__setattr__(self, "soft", soft)
        object.__setattr__(self, "binary", binary)
        if soft.shape != binary.shape:
            raise ValueError("soft and binary masks must share a shape")
        if soft.min() <= 0 or soft.max() >= 1:
            raise ValueError("soft mask entries must lie strictly in (0, 1)")
        if not np.array_equal(binary, (soft > self.threshold).astype(np.int8)):
            raise ValueError("binary mask must equal soft > threshold exactly")


@dataclass(frozen=True)
class DependencyEstimate:
    """Per-variable verdict: flagged or not, and at which lags."""

    source: int
    present: int
    lags: tuple[int, ...]


def _check_windows(model, windows):
    if len(windows) == 0:
        raise ValueError("empty test set: mask learning needs held-out windows")
    S, tau, n = windows.inputs.shape
    if tau != model.window:
        raise ValueError(f"window mismatch: model expects {model.window}, data has {tau}")
    if n != model.n_vars:
        raise ValueError(f"variable mismatch: model expects {model.n_vars}, data has {n}")
    return S, tau, n


class _frozen:
    """Temporarily clear requires_grad on the model's parameters."""

    def __init__(self, model):
        self.params = list(model.parameters().values())

    def __enter__(self):
        self.flags = [p.requires_grad for p in self.params]
        for p in self.params:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p, flag in zip(self.params, self.flags):
            p.requires_grad = flag


def learn_soft_mask(model, windows, config: LbmConfig, seed=0):
    """Optimize one global soft mask over the held-out windows.

    The model is frozen for the duration (its parameters receive no gradients
    and are bit-identical afterwards). Loss per mini-batch: mean absolute
    prediction error of the masked windows, plus lambda1 times the mask total,
    plus lambda2 times the consistency term against the current binarization
    at 0.5 (treated as constant under differentiation). Returns the final
    (window x N) soft mask.
    """
    S, tau, n = _check_windows(model, windows)
    rng = np.random.default_rng(seed)
    logits = ad.Tensor(rng.standard_normal((tau, n)), requires_grad=True)
    opt = ad.Adam([logits], lr=config.mask_learning_rate)
    inputs, targets = windows.inputs, windows.targets

    with _frozen(model):
        for _ in range(config.steps):
            order = rng.permutation(S)
            for start in range(0, S, config.batch_size):
                idx = np.sort(order[start:start + config.batch_size])
                xb = ad.Tensor(np.ascontiguousarray(inputs[idx]))
                yb = ad.Tensor(targets[idx])
                mask = ad.sigmoid(logits)
                pred = model.forward(ad.hadamard(xb, mask))
                pred_term = ad.tmean(ad.tabs(ad.subtract(pred, yb)))
                l1 = ad.tsum(mask)  # entries are positive, so this is the L1 total
                target = ad.Tensor((mask.values > 0.5).astype(np.float64))
                consistency = ad.tmean(ad.binary_cross_entropy(mask, target))
                loss = ad.add(ad.add(pred_term, ad.scale(l1, config.lambda1)),
                              ad.scale(consistency, config.lambda2))
                opt.zero_grad()
                ad.backward(loss)
                opt.step()

    with ad.no_grad():
        return ad.sigmoid(logits).values


def _masked_error(model, windows, binary, batch_size):
    """Mean |y - F(X * binary)| over all windows, fixed summation order."""
    inputs, targets = windows.inputs, windows.targets
    total = 0.0
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            xb = inputs[start:start + batch_size] * binary
            pred = model.forward(ad.Tensor(xb)).values
            total += float(np.abs(pred - targets[start:start + batch_size]).sum())
    return total / len(inputs)


def binarize_mask(soft, model, windows, lambda3, grid=DEFAULT_GRID,
                  batch_size=1024) -> ImportanceMask:
    """Grid-search the binarization threshold.

    Each candidate T is scored by the mean absolute error of the model on
    hard-masked windows plus lambda3 times the surviving cell count; ties go
    to the larger T (the sparser mask).
    """
    grid = tuple(grid)
    if not grid:
        raise ValueError("threshold grid must be nonempty")
    _check_windows(model, windows)
    soft = np.asarray(soft, dtype=np.float64)

    best = None
    for T in grid:
        binary = (soft > T).astype(np.float64)
        score = (_masked_error(model, windows, binary, batch_size)
                 + lambda3 * float(binary.sum()))
        if best is None or score <= best[0]:
            best = (score, T)
    return ImportanceMask(soft, (soft > best[1]).astype(np.int8), best[1])


def estimate_importance(model, windows, config: LbmConfig, seed=0) -> ImportanceMask:
    """Full mask pipeline: soft phase (averaged over restarts), then binarize."""
    runs = [learn_soft_mask(model, windows, config, seed=[seed, r])
            for r in range(config.restarts)]
    soft = np.mean(runs, axis=0)
    return binarize_mask(soft, model, windows, config.lambda3, config.threshold_grid,
                         batch_size=config.batch_size)


def extract_dependencies(mask, target, window) -> list[DependencyEstimate]:
    """Read per-variable lag sets off a binary mask.

    Row p flags lag (window - p). Returns one entry per variable: present=1
    iff its column has any set cell, with the flagged lags sorted ascending.
    """
    binary = mask.binary if isinstance(mask, ImportanceMask) else np.asarray(mask)
    if binary.shape[0] != window:
        raise ValueError(f"mask has {binary.shape[0]} rows, window is {window}")
    out = []
    for j in range(binary.shape[1]):
        rows = np.nonzero(binary[:, j])[0]
        lags = tuple(int(window - p) for p in rows[::-1])
        out.append(DependencyEstimate(source=j, present=int(len(lags) > 0), lags=lags))
    return out


def export_soft_csv(soft, path):
    """Window x N soft values, 6 decimals, one row per mask row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(soft, dtype=np.float64):
            writer.writerow([f"{v:.6f}" for v in row])


def export_binary_csv(binary, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(binary):
            writer.writerow([str(int(v)) for v in row])


def render_heatmap(map_values, path):
    """Write a map with entries in [0, 1] as an ASCII PGM (P2, maxval 255).

    Cells quantize by round-half-up: floor(255*v + 0.5), so 0.5 -> 128.
    Output bytes are a pure function of the input.
    """
    arr = np.asarray(map_values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("heatmap expects a 2-D map")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("heatmap cells must lie in [0, 1]")
    height, width = arr.shape
    gray = np.floor(arr * 255.0 + 0.5).astype(np.int64)
    lines = ["P2", f"{width} {height}", "255"]
    lines += [" ".join(str(v) for v in row) for row in gray]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
