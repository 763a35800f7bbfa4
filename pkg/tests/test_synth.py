"""Tests for the synthetic system generators and ground-truth bookkeeping."""

import numpy as np
import pytest

from lagscope import synth as sy


def test_sampled_systems_respect_bounds():
    for seed in range(300):
        g = sy.sample_linear_system(seed)
        assert 5 <= g.n_vars <= 15
        pairs = set()
        for e in g.edges:
            assert -0.4 <= e.alpha <= 0.4
            assert 1 <= e.lag <= 250
            assert 0 <= e.source < g.n_vars
            assert (e.target, e.source) not in pairs
            pairs.add((e.target, e.source))


def test_sampling_is_deterministic():
    a, b = sy.sample_linear_system(99), sy.sample_linear_system(99)
    assert a == b
    assert sy.sample_linear_system(100) != a


def test_linear_simulation_deterministic_and_bounded():
    g1, s1 = sy.generate_linear_case(5, 800)
    g2, s2 = sy.generate_linear_case(5, 800)
    assert g1 == g2
    assert s1.values.tobytes() == s2.values.tobytes()
    assert np.abs(s1.values).max() <= 1e6


def test_noiseless_linear_obeys_defining_equations():
    rng = np.random.default_rng(17)
    checked = 0
    for seed in range(30):
        g = sy.sample_linear_system(seed)
        boot = rng.standard_normal((max(g.max_lag, 1), g.n_vars))
        try:
            s = sy.simulate_linear(g, 500, seed, noise=False, bootstrap_values=boot)
        except sy.InstabilityError:
            continue
        x = s.values
        for t in range(g.max_lag, 500):
            for i in range(g.n_vars):
                want = sum(e.alpha * x[t - e.lag, e.source] for e in g.edges_into(i))
                assert abs(x[t, i] - want) < 1e-12
        checked += 1
        if checked >= 5:
            break
    assert checked >= 5


def test_linear_noise_enters_with_unit_scale():
    g = sy.GroundTruthGraph(2, (sy.Edge(0, 1, 0.3, 2),), np.ones(2), "linear")
    s = sy.simulate_linear(g, 20000, 7)
    resid = s.values[2:, 0] - 0.3 * s.values[:-2, 1]
    assert abs(resid.mean()) < 0.05
    assert abs(resid.std() - 1.0) < 0.05


def test_bootstrap_override_supports_constant_driver():
    # A unit self-edge at lag 1 with bootstrap 1 pins x1 at 1, so its target
    # settles at alpha once the lag elapses.
    g = sy.GroundTruthGraph(
        2, (sy.Edge(0, 1, 0.8, 5), sy.Edge(1, 1, 1.0, 1)), np.ones(2), "linear")
    s = sy.simulate_linear(g, 50, 0, noise=False, bootstrap_values=np.array([0.0, 1.0]))
    assert np.all(s.values[:, 1] == 1.0)
    assert np.all(s.values[5:, 0] == 0.8)
    assert np.all(s.values[:5, 0] == 0.0)


def test_unstable_system_raises():
    g = sy.GroundTruthGraph(1, (sy.Edge(0, 0, 1.5, 1),), np.ones(1), "linear")
    with pytest.raises(sy.InstabilityError):
        sy.simulate_linear(g, 200, 0, noise=False, bootstrap_values=np.array([1.0]))


def test_simulation_rejects_short_horizon():
    g = sy.GroundTruthGraph(1, (sy.Edge(0, 0, 0.5, 10),), np.ones(1), "linear")
    with pytest.raises(ValueError, match="largest lag"):
        sy.simulate_linear(g, 10, 0)
    with pytest.raises(ValueError):
        sy.simulate_nonlinear(270, 0)


def test_graph_validation():
    with pytest.raises(ValueError, match="lag"):
        sy.GroundTruthGraph(2, (sy.Edge(0, 1, 0.1, 0),), np.ones(2), "linear")
    with pytest.raises(ValueError, match="lag"):
        sy.GroundTruthGraph(2, (sy.Edge(0, 1, 0.1, 300),), np.ones(2), "linear")
    with pytest.raises(ValueError, match="unknown variable"):
        sy.GroundTruthGraph(2, (sy.Edge(0, 2, 0.1, 5),), np.ones(2), "linear")
    with pytest.raises(ValueError, match="noise_scale"):
        sy.GroundTruthGraph(2, (), np.ones(3), "linear")


def test_nonlinear_obeys_defining_equations():
    T = 1200
    s, g = sy.simulate_nonlinear(T, 3, noise=False)
    x = s.values
    t = np.arange(T, dtype=np.float64)
    assert np.abs(x[:, 0] - np.sin(0.5 * t) * np.cos(2 * t)).max() < 1e-12
    assert np.abs(x[:, 1] - (np.sin(2 * t) + np.cos(0.5 * t))).max() < 1e-12
    for tt in range(270, T, 7):
        assert abs(x[tt, 2] - (x[tt - 10, 0] * x[tt - 100, 1]
                               + x[tt - 70, 0] * x[tt - 40, 1])) < 1e-12
        assert abs(x[tt, 3] - (x[tt - 150, 2] * x[tt - 20, 1]
                               - 5 * np.sin(x[tt - 100, 0]))) < 1e-12
        assert abs(x[tt, 4] - x[tt - 80, 3] / (20 + x[tt - 40, 2])) < 1e-12
        assert abs(x[tt, 5] - (x[tt - 10, 0] * x[tt - 20, 1]
                               + x[tt - 110, 2] * x[tt - 120, 4]
                               + x[tt - 210, 4] * x[tt - 270, 5])) < 1e-12


def test_nonlinear_noise_scales_and_determinism():
    s1, g = sy.simulate_nonlinear(4000, 11)
    s2, _ = sy.simulate_nonlinear(4000, 11)
    assert s1.values.tobytes() == s2.values.tobytes()
    clean, _ = sy.simulate_nonlinear(4000, 11, noise=False)
    # Noise on x0 has unit scale; on x4 it is damped by 0.1.
    r0 = s1.values[:, 0] - clean.values[:, 0]
    assert abs(r0.std() - 1.0) < 0.05
    assert len(g.edges) == 15
    assert np.array_equal(g.noise_scale, [1, 1, 1, 0.1, 0.1, 0.1])


def test_ground_truth_mask_rows_and_unreachable():
    g = sy.nonlinear_graph()
    mask, unreachable = sy.ground_truth_mask(g, 2, 128)
    assert unreachable == ()
    hits = {(int(r), int(c)) for r, c in zip(*np.nonzero(mask))}
    assert hits == {(118, 0), (28, 1), (58, 0), (88, 1)}

    # Lag equal to the window lands on row 0; larger lags are unreachable.
    mask5, unreach5 = sy.ground_truth_mask(g, 5, 120)
    assert {e.lag for e in unreach5} == {210, 270}
    assert mask5[0, 4] == 1  # lag 120 -> row 0
    assert mask5[110, 0] == 1 and mask5[100, 1] == 1 and mask5[10, 2] == 1


def test_graph_json_roundtrip(tmp_path):
    g, _ = sy.generate_linear_case(21, 400)
    path = tmp_path / "graph.json"
    sy.save_graph(g, path)
    back = sy.load_graph(path)
    assert back == g
