"""Synthetic dependency systems with exact ground-truth graphs.

Two generators: randomly sampled linear lag systems, and a fixed six-variable
nonlinear system. Both are deterministic functions of their seed, so
independent cases can be produced in parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .series import MultivariateSeries

MAX_LAG_EXCLUSIVE = 300
_INSTABILITY_LIMIT = 1e6

# Variable naming shared by both generators.
def _names(n):
    return tuple(f"x{i}" for i in range(n))


class InstabilityError(RuntimeError):
    """A simulated linear system exceeded the magnitude guard."""


@dataclass(frozen=True)
class Edge:
    """Directed dependency: source drives target after ``lag`` steps."""

    target: int
    source: int
    alpha: float
    lag: int


@dataclass(frozen=True, eq=False)
class GroundTruthGraph:
    """Generating structure of a synthetic system.

    ``noise_scale`` holds the per-variable white-noise factor. ``kind`` is
    "linear" (weighted-sum recursion) or "nonlinear-fixed" (the built-in
    six-equation system).
    """

    n_vars: int
    edges: tuple[Edge, ...]
    noise_scale: np.ndarray
    kind: str
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        ns = np.asarray(self.noise_scale, dtype=np.float64)
        object.__setattr__(self, "noise_scale", ns)
        if ns.shape != (self.n_vars,):
            raise ValueError(f"noise_scale must have {self.n_vars} entries")
        if (ns < 0).any():
            raise ValueError("noise_scale entries must be >= 0")
        for e in self.edges:
            if not 1 <= e.lag < MAX_LAG_EXCLUSIVE:
                raise ValueError(f"edge lag {e.lag} outside [1, {MAX_LAG_EXCLUSIVE})")
            if not (0 <= e.target < self.n_vars and 0 <= e.source < self.n_vars):
                raise ValueError(f"edge ({e.target} <- {e.source}) references unknown variable")
            if not math.isfinite(e.alpha):
                raise ValueError("edge coefficient must be finite")

    def __eq__(self, other):
        if not isinstance(other, GroundTruthGraph):
            return NotImplemented
        return (self.n_vars == other.n_vars and self.edges == other.edges
                and np.array_equal(self.noise_scale, other.noise_scale)
                and self.kind == other.kind and self.seed == other.seed)

    def edges_into(self, target: int) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.target == target)

    @property
    def max_lag(self) -> int:
        return max((e.lag for e in self.edges), default=0)


def sample_linear_system(seed) -> GroundTruthGraph:
    """Draw a random linear lag system.

    N ~ U{5..15}; each variable gets n_i ~ U{0..N} regressors with indices
    U{0..N-1} (duplicates keep the first draw), coefficients U[-0.4, 0.4]
    and lags U{1..250}.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 16))
    edges = []
    for target in range(n):
        n_i = int(rng.integers(0, n + 1))
        seen = set()
        for _ in range(n_i):
            source = int(rng.integers(0, n))
            alpha = float(rng.uniform(-0.4, 0.4))
            lag = int(rng.integers(1, 251))
            if source in seen:
                continue
            seen.add(source)
            edges.append(Edge(target=target, source=source, alpha=alpha, lag=lag))
    base_seed = seed if isinstance(seed, int) else None
    return GroundTruthGraph(n_vars=n, edges=tuple(edges), noise_scale=np.ones(n),
                            kind="linear", seed=base_seed)


def simulate_linear(graph: GroundTruthGraph, T: int, seed, noise=True,
                    bootstrap_values=None) -> MultivariateSeries:
    """Run the weighted-sum lag recursion for T steps.

    Steps before the largest lag are filled with scaled noise (or with
    ``bootstrap_values``, a length-N vector or (max_lag, N) block, when
    given). Raises InstabilityError if any value exceeds 1e6 in magnitude;
    see generate_linear_case for the resample-on-instability wrapper.
    """
    n, max_lag = graph.n_vars, graph.max_lag
    if T <= max_lag:
        raise ValueError(f"T must exceed the largest lag ({T} <= {max_lag})")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((T, n))
    beta = graph.noise_scale if noise else np.zeros(n)

    x = np.zeros((T, n))
    x[:max_lag] = eps[:max_lag] * beta
    if bootstrap_values is not None and max_lag > 0:
        boot = np.asarray(bootstrap_values, dtype=np.float64)
        x[:max_lag] = np.broadcast_to(boot, (max_lag, n))

    targets = np.array([e.target for e in graph.edges], dtype=np.intp)
    sources = np.array([e.source for e in graph.edges], dtype=np.intp)
    lags = np.array([e.lag for e in graph.edges], dtype=np.intp)
    alphas = np.array([e.alpha for e in graph.edges])

    for t in range(max_lag, T):
        row = eps[t] * beta
        if len(targets):
            np.add.at(row, targets, alphas * x[t - lags, sources])
        x[t] = row
        if np.abs(row).max() > _INSTABILITY_LIMIT:
            raise InstabilityError(f"|x| exceeded {_INSTABILITY_LIMIT:g} at t={t}")
    return MultivariateSeries(x, _names(n))


def generate_linear_case(seed, T: int, noise=True):
    """Sample a linear system and simulate it, resampling unstable draws.

    Unconstrained random lag systems occasionally diverge; each rejection
    moves to a derived sub-seed, so the result is still a deterministic
    function of (seed, T). Returns (graph, series).
    """
    for attempt in range(64):
        graph = sample_linear_system([seed, attempt])
        graph = GroundTruthGraph(graph.n_vars, graph.edges, graph.noise_scale,
                                 graph.kind, seed=int(seed))
        try:
            series = simulate_linear(graph, T, [seed, attempt, 1], noise=noise)
            return graph, series
        except InstabilityError:
            continue
    raise InstabilityError(f"no stable system found for seed {seed} after 64 attempts")


NONLINEAR_EDGES = (
    Edge(2, 0, 1.0, 10), Edge(2, 1, 1.0, 100), Edge(2, 0, 1.0, 70), Edge(2, 1, 1.0, 40),
    Edge(3, 2, 1.0, 150), Edge(3, 1, 1.0, 20), Edge(3, 0, 1.0, 100),
    Edge(4, 3, 1.0, 80), Edge(4, 2, 1.0, 40),
    Edge(5, 0, 1.0, 10), Edge(5, 1, 1.0, 20), Edge(5, 2, 1.0, 110),
    Edge(5, 4, 1.0, 120), Edge(5, 4, 1.0, 210), Edge(5, 5, 1.0, 270),
)

_NONLINEAR_NOISE = np.array([1.0, 1.0, 1.0, 0.1, 0.1, 0.1])


def nonlinear_graph(seed=None) -> GroundTruthGraph:
    """Ground truth of the fixed six-variable nonlinear system."""
    return GroundTruthGraph(n_vars=6, edges=NONLINEAR_EDGES,
                            noise_scale=_NONLINEAR_NOISE.copy(),
                            kind="nonlinear-fixed", seed=seed)


def simulate_nonlinear(T: int, seed, noise=True):
    """Simulate the fixed six-variable nonlinear system.

    x0 and x1 are driven sinusoids over the integer sample index; x2..x5 mix
    lagged products, a sine link and a ratio term. Steps before a series'
    largest own lag are scaled noise. Returns (series, graph).
    """
    if T <= 270:
        raise ValueError(f"T must exceed the largest lag in the system ({T} <= 270)")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((T, 6))
    if not noise:
        eps = np.zeros_like(eps)
    t = np.arange(T, dtype=np.float64)

    x = np.zeros((T, 6))
    x[:, 0] = np.sin(0.5 * t) * np.cos(2.0 * t) + eps[:, 0]
    x[:, 1] = np.sin(2.0 * t) + np.cos(0.5 * t) + eps[:, 1]

    x[:100, 2] = eps[:100, 2]
    x[100:, 2] = (x[90:T - 10, 0] * x[:T - 100, 1]
                  + x[30:T - 70, 0] * x[60:T - 40, 1] + eps[100:, 2])

    x[:150, 3] = 0.1 * eps[:150, 3]
    x[150:, 3] = (x[:T - 150, 2] * x[130:T - 20, 1]
                  - 5.0 * np.sin(x[50:T - 100, 0]) + 0.1 * eps[150:, 3])

    x[:80, 4] = 0.1 * eps[:80, 4]
    x[80:, 4] = x[:T - 80, 3] / (20.0 + x[40:T - 40, 2]) + 0.1 * eps[80:, 4]

    # x5 self-depends at lag 270, so fill it in 270-step blocks: every lagged
    # value a block needs lies strictly before the block.
    x[:270, 5] = 0.1 * eps[:270, 5]
    base = np.zeros(T)
    base[270:] = (x[260:T - 10, 0] * x[250:T - 20, 1]
                  + x[160:T - 110, 2] * x[150:T - 120, 4] + 0.1 * eps[270:, 5])
    factor = np.zeros(T)
    factor[270:] = x[60:T - 210, 4]
    for start in range(270, T, 270):
        stop = min(start + 270, T)
        x[start:stop, 5] = base[start:stop] + factor[start:stop] * x[start - 270:stop - 270, 5]

    series = MultivariateSeries(x, _names(6))
    base_seed = seed if isinstance(seed, int) else None
    return series, nonlinear_graph(seed=base_seed)


def ground_truth_mask(graph: GroundTruthGraph, target: int, window: int):
    """Binary (window x N) importance map of the edges into ``target``.

    An edge with lag L marks row window - L (lag 1 = last row). Edges whose
    lag exceeds the window cannot be represented and are returned separately
    as unreachable.

    Returns (mask, unreachable_edges).
    """
    mask = np.zeros((window, graph.n_vars), dtype=np.int8)
    unreachable = []
    for e in graph.edges_into(target):
        if e.lag > window:
            unreachable.append(e)
        else:
            mask[window - e.lag, e.source] = 1
    return mask, tuple(unreachable)


def graph_to_dict(graph: GroundTruthGraph) -> dict:
    return {
        "n_vars": graph.n_vars,
        "edges": [
            {"target": e.target, "source": e.source, "alpha": e.alpha, "lag": e.lag}
            for e in graph.edges
        ],
        "noise_scale": [float(v) for v in graph.noise_scale],
        "kind": graph.kind,
        "seed": graph.seed,
    }


def graph_from_dict(doc: dict) -> GroundTruthGraph:
    return GroundTruthGraph(
        n_vars=int(doc["n_vars"]),
        edges=tuple(
            Edge(int(e["target"]), int(e["source"]), float(e["alpha"]), int(e["lag"]))
            for e in doc["edges"]
        ),
        noise_scale=np.asarray(doc["noise_scale"], dtype=np.float64),
        kind=doc["kind"],
        seed=doc.get("seed"),
    )


def save_graph(graph: GroundTruthGraph, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_graph(path) -> GroundTruthGraph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_dict(json.load(fh))
