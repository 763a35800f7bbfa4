"""Graph discovery orchestration and edge-level precision/recall scoring."""

import json

import numpy as np
import pytest

import lagscope.discovery as dc
import lagscope.lbm as lb
import lagscope.models as md
import lagscope.series as se
import lagscope.synth as sy


def small_config(**kwargs):
    defaults = dict(
        model=md.ModelConfig(channels=4, kernel_size=3),
        train=md.TrainConfig(epochs=2, batch_size=128, seed=0),
        mask=lb.LbmConfig(steps=2, batch_size=256),
        window=12,
        depth_limit=2,
    )
    defaults.update(kwargs)
    return dc.DiscoveryConfig(**defaults)


def small_series(seed=0, T=400, n_vars=3):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((T, n_vars))
    values[3:, 0] += 0.9 * values[:-3, 1]
    return se.MultivariateSeries(values, tuple(f"x{i}" for i in range(n_vars)))


def test_graph_edge_validation():
    edge = dc.GraphEdge(1, 0, (np.int64(3), 5), depth=1)
    assert edge.lags == (3, 5)
    assert isinstance(edge.lags[0], int)
    with pytest.raises(ValueError, match="at least one lag"):
        dc.GraphEdge(1, 0, (), depth=1)


def test_edge_match_config():
    assert dc.EdgeMatchConfig().tolerance == 5
    with pytest.raises(ValueError, match="tolerance"):
        dc.EdgeMatchConfig(tolerance=-1)


def test_runs_splits_contiguous_blocks():
    assert dc._runs((1, 2, 3, 7, 9, 10)) == [(1, 2, 3), (7,), (9, 10)]
    assert dc._runs((5,)) == [(5,)]
    assert dc._runs(()) == []
    assert dc._runs((9, 7, 8)) == [(7, 8, 9)]


def test_score_perfect_single_edge():
    predicted = [dc.GraphEdge(1, 0, (5,), depth=1)]
    score = dc.score_edges(predicted, [(1, 5)], dc.EdgeMatchConfig(tolerance=2))
    assert score["precision"] == 1.0
    assert score["recall"] == 1.0
    assert score["matched"] == [(1, 5)]
    assert score["missed"] == []
    assert score["tolerance"] == 2


def test_score_zero_predictions_scores_zero():
    score = dc.score_edges([], [(1, 5), (2, 9)])
    assert score["precision"] == 0.0
    assert score["recall"] == 0.0
    assert score["missed"] == [(1, 5), (2, 9)]


def test_score_one_match_of_eight_truths():
    # One predicted run matching exactly one of eight true dependencies:
    # precision 1, recall 0.125.
    truth = [(0, 10), (0, 50), (1, 100), (2, 30), (2, 200), (3, 77),
             (4, 120), (5, 60)]
    predicted = [dc.GraphEdge(1, 0, (98, 99, 100), depth=1)]
    score = dc.score_edges(predicted, truth, dc.EdgeMatchConfig(tolerance=5))
    assert score["precision"] == 1.0
    assert score["recall"] == 0.125
    assert score["matched"] == [(1, 100)]
    assert len(score["missed"]) == 7


def test_score_within_tolerance_only():
    predicted = [dc.GraphEdge(1, 0, (5,), depth=1)]
    score = dc.score_edges(predicted, [(1, 9)], dc.EdgeMatchConfig(tolerance=3))
    assert score["precision"] == 0.0 and score["recall"] == 0.0
    score = dc.score_edges(predicted, [(1, 9)], dc.EdgeMatchConfig(tolerance=4))
    assert score["precision"] == 1.0 and score["recall"] == 1.0


def test_score_monotone_in_tolerance():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_truth = rng.integers(1, 6)
        truth = [(int(rng.integers(0, 4)), int(rng.integers(1, 60)))
                 for _ in range(n_truth)]
        predicted = []
        for _ in range(rng.integers(0, 4)):
            start = int(rng.integers(1, 60))
            run = tuple(range(start, start + int(rng.integers(1, 4))))
            predicted.append(dc.GraphEdge(int(rng.integers(0, 4)), 0, run, depth=1))
        last_p, last_r = -1.0, -1.0
        for w in range(0, 12, 2):
            score = dc.score_edges(predicted, truth, dc.EdgeMatchConfig(tolerance=w))
            assert score["precision"] >= last_p
            assert score["recall"] >= last_r
            last_p, last_r = score["precision"], score["recall"]


def test_score_perfect_match_property():
    rng = np.random.default_rng(1)
    for _ in range(200):
        pairs = {(int(rng.integers(0, 5)), int(rng.integers(1, 80)))
                 for _ in range(rng.integers(1, 7))}
        predicted = [dc.GraphEdge(s, 0, (lag,), depth=1) for s, lag in pairs]
        w = int(rng.integers(0, 6))
        score = dc.score_edges(predicted, sorted(pairs), dc.EdgeMatchConfig(tolerance=w))
        assert score["precision"] == 1.0
        assert score["recall"] == 1.0
        assert score["missed"] == []


def test_score_accepts_knowledge_graph_and_truth_graph():
    graph = dc.TemporalKnowledgeGraph(target=0, names=("x0", "x1", "x2"))
    graph.edges.append(dc.GraphEdge(1, 0, (5,), depth=1))
    graph.edges.append(dc.GraphEdge(2, 1, (9,), depth=2))  # ignored: depth 2
    truth = sy.GroundTruthGraph(
        3, (sy.Edge(0, 1, 0.3, 5), sy.Edge(0, 2, 0.2, 40), sy.Edge(1, 2, 0.2, 7)),
        np.ones(3), "linear")
    score = dc.score_edges(graph, truth, dc.EdgeMatchConfig(tolerance=2))
    assert score["precision"] == 1.0
    assert score["recall"] == 0.5  # (1,5) matched; (2,40) missed; (1,2,7) is not into 0
    assert score["missed"] == [(2, 40)]


def test_score_truth_graph_requires_knowledge_graph():
    truth = sy.GroundTruthGraph(2, (sy.Edge(0, 1, 0.3, 5),), np.ones(2), "linear")
    with pytest.raises(ValueError, match="knowledge graph"):
        dc.score_edges([dc.GraphEdge(1, 0, (5,), depth=1)], truth)


def test_discover_contract_and_determinism():
    series = small_series()
    cfg = small_config()
    graph = dc.discover(series, target=0, config=cfg, seed=3)

    assert graph.target == 0
    assert graph.names == ("x0", "x1", "x2")
    assert graph.nodes[0].depth == 1
    assert (0, 1) in graph.masks
    sources = sorted({e.source for e in graph.edges_into(0)})
    for j in sources:
        assert j in graph.nodes
        assert (j, 2) in graph.masks
    assert len(graph.masks) == 1 + len(sources)
    depth2_dsts = {e.dst for e in graph.edges if e.depth == 2}
    assert depth2_dsts <= set(sources)
    keys = [(e.depth, e.dst, e.source, e.lags) for e in graph.edges]
    assert keys == sorted(keys)

    again = dc.discover(series, target=0, config=cfg, seed=3)
    assert dc.graph_to_dict(again) == dc.graph_to_dict(graph)


def test_discover_depth_limit_one():
    series = small_series(seed=5)
    cfg = small_config(depth_limit=1)
    graph = dc.discover(series, target=1, config=cfg, seed=1)
    assert all(e.depth == 1 for e in graph.edges)
    assert list(graph.masks) == [(1, 1)]
    assert list(graph.nodes) == [1]


@pytest.mark.filterwarnings("ignore:overflow")
def test_discover_divergence_names_variable():
    rng = np.random.default_rng(2)
    values = rng.standard_normal((300, 2)) * 1e200
    series = se.MultivariateSeries(values, ("x0", "x1"))
    cfg = small_config(standardize=False)
    with pytest.raises(md.TrainingDivergence, match=r"variable 0 \(x0\)"):
        dc.discover(series, target=0, config=cfg, seed=0)


def test_graph_json_document(tmp_path):
    graph = dc.TemporalKnowledgeGraph(target=0, names=("a", "b"))
    graph.nodes[0] = dc.NodeReport(0, "a", 0.5, 0.75, 1)
    graph.edges.append(dc.GraphEdge(1, 0, (3, 4), depth=1))
    doc = dc.graph_to_dict(graph)
    assert doc["target"] == 0
    assert doc["nodes"] == [{"id": 0, "name": "a", "test_mse": 0.75}]
    assert doc["edges"] == [{"src": 1, "dst": 0, "lags": [3, 4], "depth": 1}]

    path = tmp_path / "graph.json"
    dc.save_graph(graph, path)
    assert json.loads(path.read_text(encoding="utf-8")) == doc


def test_score_json_document(tmp_path):
    score = dc.score_edges([dc.GraphEdge(1, 0, (5,), depth=1)], [(1, 5), (0, 9)],
                           dc.EdgeMatchConfig(tolerance=1))
    path = tmp_path / "score.json"
    dc.save_score(score, path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc == {"precision": 1.0, "recall": 0.5, "tolerance": 1,
                   "matched": [[1, 5]], "missed": [[0, 9]]}
