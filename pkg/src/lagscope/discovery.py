"""Dependency discovery: train, mask, recurse one level, and score.

discover() trains a regressor for the target variable, reads its (source,
lag) dependencies off a learned binary mask, then repeats once for each
flagged source. score_edges() compares flagged lag runs against a known
generating graph within a lag tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import lbm as lb
from . import models as md
from . import series as se
from .synth import GroundTruthGraph

DEFAULT_WINDOW = 300
DEFAULT_TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class GraphEdge:
    """Flagged dependency: ``source`` drives ``dst`` at the given lags."""

    source: int
    dst: int
    lags: tuple[int, ...]
    depth: int

    def __post_init__(self):
        if not self.lags:
            raise ValueError("graph edges carry at least one lag")
        object.__setattr__(self, "lags", tuple(int(v) for v in self.lags))


@dataclass
class NodeReport:
    """Per-modelled-variable training record."""

    index: int
    name: str
    train_mse: float
    test_mse: float
    depth: int


@dataclass
class TemporalKnowledgeGraph:
    """Discovered dependency structure around one target variable.

    ``masks`` keeps each modelled variable's importance mask keyed by
    (variable index, depth), for export and inspection.
    """

    target: int
    names: tuple[str, ...]
    nodes: dict[int, NodeReport] = field(default_factory=dict)
    edges: list[GraphEdge] = field(default_factory=list)
    masks: dict = field(default_factory=dict)

    def edges_into(self, dst):
        return [e for e in self.edges if e.dst == dst]


@dataclass(frozen=True)
class EdgeMatchConfig:
    """Scoring protocol: lag tolerance in samples.

    A prediction unit is a maximal contiguous run of flagged lags on one
    variable; a truth edge matches a unit on the same variable whose run
    comes within ``tolerance`` of the true lag.
    """

    tolerance: int = 5

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError("lag tolerance must be >= 0")


@dataclass(frozen=True)
class DiscoveryConfig:
    """End-to-end settings for discover()."""

    model_kind: str = "tcn"
    model: md.ModelConfig = field(default_factory=md.ModelConfig)
    train: md.TrainConfig = field(default_factory=md.TrainConfig)
    mask: lb.LbmConfig = field(default_factory=lb.LbmConfig)
    window: int = DEFAULT_WINDOW
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    depth_limit: int = 2
    standardize: bool = True


def _fit_and_mask(series, index, cfg, seed):
    """Train a fresh model for one variable and extract its dependencies."""
    dataset = se.make_windows(series, target_index=index, window=cfg.window)
    train_set, test_set = se.split_train_test(dataset, cfg.train_fraction)
    model = md.build_model(cfg.model_kind, series.N, cfg.window, cfg.model,
                           rng=[seed, index])
    train_cfg = md.TrainConfig(
        learning_rate=cfg.train.learning_rate, epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size, seed=cfg.train.seed + index)
    try:
        md.train(model, train_set, train_cfg)
    except md.TrainingDivergence as exc:
        raise md.TrainingDivergence(
            f"training for variable {index} ({series.names[index]}) diverged: {exc}"
        ) from exc
    report = NodeReport(
        index=index, name=series.names[index],
        train_mse=md.evaluate_mse(model, train_set),
        test_mse=md.evaluate_mse(model, test_set), depth=0)
    mask = lb.estimate_importance(model, test_set, cfg.mask, seed=[seed, index, 1])
    deps = lb.extract_dependencies(mask, index, cfg.window)
    return model, mask, deps, report


def discover(series, target, config: DiscoveryConfig = None, seed=0):
    """Build the dependency graph around ``target``.

    Depth 1 models the target itself; every flagged source (including the
    target, when self-flagged) is then modelled once at depth 2. Sources are
    processed in ascending index order and edges are kept sorted by (source,
    first lag), so results are reproducible run to run. Returns a
    TemporalKnowledgeGraph; per-node train/test MSE is recorded on its nodes.
    """
    cfg = config or DiscoveryConfig()
    if cfg.standardize:
        series, _, _ = se.standardize(series)
    graph = TemporalKnowledgeGraph(target=target, names=tuple(series.names))

    _, mask, deps, report = _fit_and_mask(series, target, cfg, seed)
    report.depth = 1
    graph.nodes[target] = report
    graph.masks[(target, 1)] = mask
    for dep in deps:
        if dep.present:
            graph.edges.append(GraphEdge(dep.source, target, dep.lags, depth=1))

    if cfg.depth_limit >= 2:
        sources = sorted({e.source for e in graph.edges_into(target)})
        for j in sources:
            _, mask_j, deps_j, report_j = _fit_and_mask(series, j, cfg, seed)
            report_j.depth = 2
            graph.nodes.setdefault(j, report_j)
            graph.masks[(j, 2)] = mask_j
            for dep in deps_j:
                if dep.present:
                    graph.edges.append(GraphEdge(dep.source, j, dep.lags, depth=2))

    graph.edges.sort(key=lambda e: (e.depth, e.dst, e.source, e.lags))
    return graph


def _runs(lags):
    """Split a sorted lag tuple into maximal contiguous runs."""
    runs, current = [], []
    for lag in sorted(lags):
        if current and lag != current[-1] + 1:
            runs.append(tuple(current))
            current = []
        current.append(lag)
    if current:
        runs.append(tuple(current))
    return runs


def score_edges(predicted, truth, config: EdgeMatchConfig = EdgeMatchConfig()):
    """Edge-level precision/recall of predicted lags against a known graph.

    ``predicted``: GraphEdge list (or TemporalKnowledgeGraph, scored at depth
    1 into its target). ``truth``: GroundTruthGraph edges into the same
    target, or an explicit (source, lag) iterable. Returns a dict with
    precision, recall, tolerance, and the matched/missed truth edges.
    Zero predictions score (0, 0) by convention.
    """
    target = None
    if isinstance(predicted, TemporalKnowledgeGraph):
        target = predicted.target
        predicted = [e for e in predicted.edges_into(target) if e.depth == 1]
    if isinstance(truth, GroundTruthGraph):
        if target is None:
            raise ValueError("pass a knowledge graph or explicit (source, lag) truth pairs")
        truth_pairs = [(e.source, e.lag) for e in truth.edges_into(target)]
    else:
        truth_pairs = [(int(s), int(lag)) for s, lag in truth]

    units = []  # (source, run) prediction units
    for edge in predicted:
        for run in _runs(edge.lags):
            units.append((edge.source, run))

    w = config.tolerance
    matched_units = set()
    matched_truth, missed_truth = [], []
    for s, lag in truth_pairs:
        hit = False
        for u, (source, run) in enumerate(units):
            if source == s and run[0] - w <= lag <= run[-1] + w:
                matched_units.add(u)
                hit = True
        (matched_truth if hit else missed_truth).append((s, lag))

    precision = len(matched_units) / len(units) if units else 0.0
    recall = len(matched_truth) / len(truth_pairs) if truth_pairs else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "tolerance": w,
        "matched": matched_truth,
        "missed": missed_truth,
    }


def graph_to_dict(graph: TemporalKnowledgeGraph) -> dict:
    return {
        "target": graph.target,
        "nodes": [
            {"id": r.index, "name": r.name, "test_mse": r.test_mse}
            for r in sorted(graph.nodes.values(), key=lambda r: r.index)
        ],
        "edges": [
            {"src": e.source, "dst": e.dst, "lags": list(e.lags), "depth": e.depth}
            for e in graph.edges
        ],
    }


def save_graph(graph, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_score(score, path):
    doc = {
        "precision": score["precision"],
        "recall": score["recall"],
        "tolerance": score["tolerance"],
        "matched": [list(pair) for pair in score["matched"]],
        "missed": [list(pair) for pair in score["missed"]],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
