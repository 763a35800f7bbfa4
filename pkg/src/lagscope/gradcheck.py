"""Finite-difference verification of the reverse-mode engine.

Every differentiable primitive and every registered model class is checked
against central finite differences at randomly sampled coordinates. The
error reported for a coordinate is |analytic - numeric| scaled by
max(1, |analytic|, |numeric|), i.e. relative for large gradients and
absolute near zero, where a relative measure would only amplify rounding
noise in the probe itself.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-5


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def _sample_coords(shape, count, rng):
    size = int(np.prod(shape)) if shape else 1
    count = min(count, size)
    flat = rng.choice(size, size=count, replace=False)
    return [np.unravel_index(int(i), shape) if shape else () for i in flat]


def check_gradients(make_loss, tensors, rng, points_per_tensor=4, h=DEFAULT_STEP):
    """Compare analytic and central-difference gradients.

    ``make_loss()`` must rebuild the scalar loss from the live ``tensors``
    (their ``.values`` are perturbed in place between probes). Returns
    (worst_error, n_points).
    """
    for t in tensors:
        t.zero_grad()
    ad.backward(make_loss())

    def loss_value():
        with ad.no_grad():
            return float(make_loss().values)

    worst, n_points = 0.0, 0
    for t in tensors:
        if t.grad is None:
            raise AssertionError("tensor received no gradient")
        for idx in _sample_coords(t.values.shape, points_per_tensor, rng):
            orig = float(t.values[idx])
            t.values[idx] = orig + h
            hi = loss_value()
            t.values[idx] = orig - h
            lo = loss_value()
            t.values[idx] = orig
            numeric = (hi - lo) / (2.0 * h)
            worst = max(worst, relative_error(float(t.grad[idx]), numeric))
            n_points += 1
    return worst, n_points


def _leaf(rng, shape, away_from_zero=0.0):
    v = rng.standard_normal(shape)
    if away_from_zero:
        v = v + away_from_zero * np.sign(v)
    return ad.Tensor(v, requires_grad=True)


def run_op_checks(seed=0, points_per_tensor=4, h=DEFAULT_STEP):
    """Gradcheck every primitive. Returns [(name, worst_error, n_points)]."""
    rng = np.random.default_rng(seed)
    results = []

    def case(name, tensors, build):
        # Fixed random reduction weights keep gradients non-uniform while
        # staying constant across finite-difference probes.
        with ad.no_grad():
            shape = build().shape
        w = ad.Tensor(np.random.default_rng(rng.integers(2**32)).standard_normal(shape))
        make_loss = lambda: ad.tsum(ad.hadamard(build(), w))
        worst, n = check_gradients(make_loss, tensors, rng, points_per_tensor, h)
        results.append((name, worst, n))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (4,))
    case("add", [a, b], lambda: ad.add(a, b))
    case("subtract", [a, b], lambda: ad.subtract(a, b))
    case("hadamard", [a, b], lambda: ad.hadamard(a, b))
    case("scale", [a], lambda: ad.scale(a, -2.7))

    m1 = _leaf(rng, (3, 4))
    m2 = _leaf(rng, (4, 5))
    case("matmul", [m1, m2], lambda: ad.matmul(m1, m2))
    mb = _leaf(rng, (2, 3, 4))
    case("matmul-batched", [mb, m2], lambda: ad.matmul(mb, m2))
    mb2 = _leaf(rng, (2, 4, 5))
    case("matmul-batched-both", [mb, mb2], lambda: ad.matmul(mb, mb2))

    s = _leaf(rng, (4, 5))
    case("sigmoid", [s], lambda: ad.sigmoid(s))
    case("tanh", [s], lambda: ad.tanh(s))
    r = _leaf(rng, (4, 5), away_from_zero=0.05)
    case("relu", [r], lambda: ad.relu(r))
    case("abs", [r], lambda: ad.tabs(r))

    t = _leaf(rng, (3, 4, 2))
    case("sum-all", [t], lambda: ad.tsum(t))
    case("sum-axis", [t], lambda: ad.tsum(t, axis=1))
    case("sum-keepdims", [t], lambda: ad.tsum(t, axis=(0, 2), keepdims=True))
    case("mean", [t], lambda: ad.tmean(t, axis=2))

    c1, c2, c3 = _leaf(rng, (2, 3)), _leaf(rng, (2, 1)), _leaf(rng, (2, 2))
    case("concat", [c1, c2, c3], lambda: ad.concat([c1, c2, c3], axis=1))

    sl = _leaf(rng, (5, 6))
    case("slice", [sl], lambda: ad.tslice(sl, (slice(1, 4), slice(None, None, 2))))
    case("index", [sl], lambda: ad.tslice(sl, 2))

    case("transpose", [t], lambda: ad.transpose(t, (2, 0, 1)))
    case("reshape", [t], lambda: ad.reshape(t, (6, 4)))
    case("flip", [t], lambda: ad.flip(t, axis=1))

    sm = _leaf(rng, (3, 5))
    case("softmax", [sm], lambda: ad.softmax(sm, axis=-1))

    logits = _leaf(rng, (4, 3))
    target = ad.Tensor((rng.random((4, 3)) > 0.5).astype(np.float64))
    case("bce", [logits], lambda: ad.binary_cross_entropy(ad.sigmoid(logits), target))

    for name, (ci, co, k, L, d) in {
        "conv-d1": (2, 3, 4, 9, 1),
        "conv-d3": (3, 2, 3, 16, 3),
        "conv-k1": (2, 2, 1, 7, 5),
    }.items():
        x = _leaf(rng, (2, ci, L))
        f = _leaf(rng, (co, ci, k))
        case(name, [x, f], lambda x=x, f=f, d=d: ad.conv1d_dilated_causal(x, f, dilation=d))

    return results


def run_model_checks(seed=0, points_per_model=20, h=DEFAULT_STEP):
    """Gradcheck every model class end to end through a squared-error loss.

    Tiny dimensions keep the probe cheap; the loss is smooth, so central
    differences are trustworthy at the default step. Returns
    [(kind, worst_error, n_points)].
    """
    from . import models

    rng = np.random.default_rng(seed)
    sizes = {"antisymmetric-rnn": {"hidden_size": 8}, "rhn": {"hidden_size": 8, "depth": 3}}
    results = []
    for kind in models.MODEL_KINDS:
        base = {"hidden_size": 4, "channels": 4, "kernel_size": 3, "variant": "default"}
        base.update(sizes.get(kind, {}))
        cfg = models.ModelConfig(**base)
        model = models.build_model(kind, n_vars=3, window=12, config=cfg,
                                   rng=np.random.default_rng(rng.integers(2**32)))
        x = ad.Tensor(rng.standard_normal((2, 12, 3)))
        y = ad.Tensor(rng.standard_normal(2))
        params = list(model.parameters().values())

        def make_loss(model=model, x=x, y=y):
            d = ad.subtract(model.forward(x), y)
            return ad.tmean(ad.hadamard(d, d))

        per_tensor = max(1, points_per_model // len(params))
        worst, n = check_gradients(make_loss, params, rng, per_tensor, h)
        results.append((kind, worst, n))
    return results


def run_all(seed=0, tolerance=DEFAULT_TOLERANCE):
    """Full verification sweep. Returns (results, n_points, passed)."""
    results = run_op_checks(seed=seed) + run_model_checks(seed=seed)
    n_points = sum(n for _, _, n in results)
    passed = all(worst < tolerance for _, worst, _ in results)
    return results, n_points, passed
