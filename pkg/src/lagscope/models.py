"""Sequence regressors mapping a (window x variables) block to a scalar.

Six families: LSTM, GRU, IMV-LSTM (variable-wise hidden states), antisymmetric
RNN (gated forward-Euler), RHN (stacked highway micro-layers), and dilated
causal TCN with four head/topology variants. All share one calling
convention — forward(x: (B, window, N)) -> (B,) — one training loop, and one
JSON checkpoint envelope.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

MODEL_KINDS = ("lstm", "gru", "imv-lstm", "antisymmetric-rnn", "rhn", "tcn")

TCN_VARIANTS = ("default", "output-attention", "layerwise-attention", "stack",
                "bidirectional")


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared across model kinds.

    ``hidden_size`` is the recurrent state width (per variable for IMV-LSTM);
    ``channels``/``kernel_size``/``levels``/``variant`` drive the TCN
    (levels=None picks the smallest count whose receptive field covers the
    window); ``depth`` is the RHN micro-layer count; ``gamma``/``step_size``
    parameterize the antisymmetric cell.
    """

    hidden_size: int = 32
    channels: int = 16
    kernel_size: int = 7
    levels: int | None = None
    variant: str = "default"
    depth: int = 2
    gamma: float = 0.01
    step_size: float = 0.01
    enforce_receptive_field: bool = True


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def _uniform(rng, shape, fan_in):
    return ad.Tensor(ad.uniform_init(rng, shape, fan_in), requires_grad=True)


def _check_input(x, n_vars):
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(np.asarray(x, dtype=np.float64))
    if x.values.ndim != 3:
        raise ValueError(f"expected (batch, window, vars) input, got shape {x.shape}")
    B, tau, n = x.shape
    if tau < 1:
        raise ValueError("zero-length window")
    if n != n_vars:
        raise ValueError(f"input has {n} variables, model expects {n_vars}")
    return x, B, tau


def _head(h, w, b, batch):
    """Linear readout (B, d) @ (d, 1) + b -> (B,)."""
    return ad.reshape(ad.add(ad.matmul(h, w), b), (batch,))


class Lstm:
    """Standard LSTM; gate blocks ordered [input, forget, candidate, output]."""

    kind = "lstm"

    def __init__(self, n_vars, window, config, rng):
        self.n_vars, self.window, self.config = n_vars, window, config
        d = config.hidden_size
        self.hidden_size = d
        self._params = {
            "w_x": _uniform(rng, (n_vars, 4 * d), n_vars),
            "w_h": _uniform(rng, (d, 4 * d), d),
            "b": _uniform(rng, (4 * d,), d),
            "w_out": _uniform(rng, (d, 1), d),
            "b_out": _uniform(rng, (1,), d),
        }

    def parameters(self):
        return self._params

    def forward(self, x):
        x, B, tau = _check_input(x, self.n_vars)
        p, d = self._params, self.hidden_size
        h = ad.Tensor(np.zeros((B, d)))
        c = ad.Tensor(np.zeros((B, d)))
        for t in range(tau):
            xt = ad.tslice(x, (slice(None), t))
            z = ad.add(ad.add(ad.matmul(xt, p["w_x"]), ad.matmul(h, p["w_h"])), p["b"])
            i = ad.sigmoid(ad.tslice(z, (slice(None), slice(0, d))))
            f = ad.sigmoid(ad.tslice(z, (slice(None), slice(d, 2 * d))))
            g = ad.tanh(ad.tslice(z, (slice(None), slice(2 * d, 3 * d))))
            o = ad.sigmoid(ad.tslice(z, (slice(None), slice(3 * d, 4 * d))))
            c = ad.add(ad.hadamard(f, c), ad.hadamard(i, g))
            h = ad.hadamard(o, ad.tanh(c))
        return _head(h, p["w_out"], p["b_out"], B)


class Gru:
    """Standard GRU; the update gate interpolates toward the candidate state."""

    kind = "gru"

    def __init__(self, n_vars, window, config, rng):
        self.n_vars, self.window, self.config = n_vars, window, config
        d = config.hidden_size
        self.hidden_size = d
        self._params = {
            "w_x_zr": _uniform(rng, (n_vars, 2 * d), n_vars),
            "w_h_zr": _uniform(rng, (d, 2 * d), d),
            "b_zr": _uniform(rng, (2 * d,), d),
            "w_x_n": _uniform(rng, (n_vars, d), n_vars),
            "w_h_n": _uniform(rng, (d, d), d),
            "b_n": _uniform(rng, (d,), d),
            "w_out": _uniform(rng, (d, 1), d),
            "b_out": _uniform(rng, (1,), d),
        }

    def parameters(self):
        return self._params

    def forward(self, x):
        x, B, tau = _check_input(x, self.n_vars)
        p, d = self._params, self.hidden_size
        h = ad.Tensor(np.zeros((B, d)))
        for t in range(tau):
            xt = ad.tslice(x, (slice(None), t))
            zr = ad.sigmoid(ad.add(
                ad.add(ad.matmul(xt, p["w_x_zr"]), ad.matmul(h, p["w_h_zr"])),
                p["b_zr"]))
            z = ad.tslice(zr, (slice(None), slice(0, d)))
            r = ad.tslice(zr, (slice(None), slice(d, 2 * d)))
            n = ad.tanh(ad.add(
                ad.add(ad.matmul(xt, p["w_x_n"]), ad.matmul(ad.hadamard(r, h), p["w_h_n"])),
                p["b_n"]))
            h = ad.add(h, ad.hadamard(z, ad.subtract(n, h)))
        return _head(h, p["w_out"], p["b_out"], B)


class ImvLstm:
    """LSTM with one hidden vector per input variable.

    Hidden-to-hidden maps are blockwise: variable j's d-vector is transformed
    by its own d x d matrix, and j's scalar input enters through its own
    d-vector, so no state mixes across variables until the readout. The
    readout scores each variable's final hidden vector against a shared
    vector, softmax-normalizes (uniform for identical vectors by symmetry),
    and applies a linear head to the attention-weighted sum. The most recent
    attention weights are kept on ``last_attention`` for inspection.
    """

    kind = "imv-lstm"

    def __init__(self, n_vars, window, config, rng):
        self.n_vars, self.window, self.config = n_vars, window, config
        d = config.hidden_size
        self.hidden_size = d
        self._params = {}
        for gate in ("i", "j", "f", "o"):
            self._params[f"w_{gate}"] = _uniform(rng, (n_vars, d, d), d)
            self._params[f"u_{gate}"] = _uniform(rng, (n_vars, d), 1)
            self._params[f"b_{gate}"] = _uniform(rng, (n_vars, d), d)
        self._params["v_att"] = _uniform(rng, (d, 1), d)
        self._params["w_out"] = _uniform(rng, (d, 1), d)
        self._params["b_out"] = _uniform(rng, (1,), d)
        self.last_attention = None

    def parameters(self):
        return self._params

    def step(self, h, c, xt):
        """One cell update; h, c are (B, N, d), xt is (B, N)."""
        p = self._params
        B = xt.shape[0]
        n, d = self.n_vars, self.hidden_size
        xcol = ad.reshape(xt, (B, n, 1))
        hcol = ad.reshape(h, (B, n, d, 1))

        def pre(gate):
            wh = ad.reshape(ad.matmul(p[f"w_{gate}"], hcol), (B, n, d))
            ux = ad.hadamard(p[f"u_{gate}"], xcol)
            return ad.add(ad.add(wh, ux), p[f"b_{gate}"])

        i = ad.sigmoid(pre("i"))
        j = ad.tanh(pre("j"))
        f = ad.sigmoid(pre("f"))
        o = ad.sigmoid(pre("o"))
        c = ad.add(ad.hadamard(c, f), ad.hadamard(i, j))
        h = ad.hadamard(o, ad.tanh(c))
        return h, c

    def forward(self, x):
        x, B, tau = _check_input(x, self.n_vars)
        n, d = self.n_vars, self.hidden_size
        h = ad.Tensor(np.zeros((B, n, d)))
        c = ad.Tensor(np.zeros((B, n, d)))
        for t in range(tau):
            h, c = self.step(h, c, ad.tslice(x, (slice(None), t)))
        p = self._params
        scores = ad.reshape(ad.matmul(h, p["v_att"]), (B, n))
        alpha = ad.softmax(scores, axis=1)
        self.last_attention = alpha.values.copy()
        mixed = ad.tsum(ad.hadamard(h, ad.reshape(alpha, (B, n, 1))), axis=1)
        return _head(mixed, p["w_out"], p["b_out"], B)


class AntisymmetricRnn:
    """Gated forward-Euler cell over an antisymmetric-minus-diffusion matrix.

    The effective recurrent matrix is W - W^T - gamma*I, whose symmetric part
    is exactly -gamma*I, keeping the recurrence close to norm-preserving.
    """

    kind = "antisymmetric-rnn"

    def __init__(self, n_vars, window, config, rng):
        self.n_vars, self.window, self.config = n_vars, window, config
        d = config.hidden_size
        self.hidden_size = d
        self._params = {
            "w_h": _uniform(rng, (d, d), d),
            "v_z": _uniform(rng, (n_vars, d), n_vars),
            "b_z": _uniform(rng, (d,), n_vars),
            "v_h": _uniform(rng, (n_vars, d), n_vars),
            "b_h": _uniform(rng, (d,), n_vars),
            "w_out": _uniform(rng, (d, 1), d),
            "b_out": _uniform(rng, (1,), d),
        }

    def parameters(self):
        return self._params

    def effective_matrix(self):
        w = self._params["w_h"]
        gamma_eye = ad.Tensor(self.config.gamma * np.eye(self.hidden_size))
        return ad.subtract(ad.subtract(w, ad.transpose(w, (1, 0))), gamma_eye)

    def forward(self, x):
        x, B, tau = _check_input(x, self.n_vars)
        p = self._params
        eps = self.config.step_size
        a_t = ad.transpose(self.effective_matrix(), (1, 0))
        h = ad.Tensor(np.zeros((B, self.hidden_size)))
        for t in range(tau):
            xt = ad.tslice(x, (slice(None), t))
            rec = ad.matmul(h, a_t)
            z = ad.sigmoid(ad.add(ad.add(rec, ad.matmul(xt, p["v_z"])), p["b_z"]))
            u = ad.tanh(ad.add(ad.add(rec, ad.matmul(xt, p["v_h"])), p["b_h"]))
            h = ad.add(h, ad.scale(ad.hadamard(z, u), eps))
        return _head(h, p["w_out"], p["b_out"], B)


class Rhn:
    """Recurrent highway network: ``depth`` micro-layers per time step.

    The input is injected only at the first micro-layer; each layer blends a
    tanh transform with the carried state through sigmoid transform/carry
    gates: s <- h*t + s*c.
    """

    kind = "rhn"

    def __init__(self, n_vars, window, config, rng):
        if config.depth < 1:
            raise ValueError("recurrence depth must be >= 1")
        self.n_vars, self.window, self.config = n_vars, window, config
        d = config.hidden_size
        self.hidden_size = d
        self._params = {
            "w_h": _uniform(rng, (n_vars, d), n_vars),
            "w_t": _uniform(rng, (n_vars, d), n_vars),
            "w_c": _uniform(rng, (n_vars, d), n_vars),
        }
        for layer in range(config.depth):
            for gate in ("h", "t", "c"):
                self._params[f"r_{gate}{layer}"] = _uniform(rng, (d, d), d)
                self._params[f"b_{gate}{layer}"] = _uniform(rng, (d,), d)
        self._params["w_out"] = _uniform(rng, (d, 1), d)
        self._params["b_out"] = _uniform(rng, (1,), d)

    def parameters(self):
        return self._params

    def step(self, s, xt):
        p = self._params
        for layer in range(self.config.depth):
            def pre(gate):
                out = ad.add(ad.matmul(s, p[f"r_{gate}{layer}"]), p[f"b_{gate}{layer}"])
                if layer == 0:
                    out = ad.add(out, ad.matmul(xt, p[f"w_{gate}"]))
                return out

            h = ad.tanh(pre("h"))
            t_gate = ad.sigmoid(pre("t"))
            c_gate = ad.sigmoid(pre("c"))
            s = ad.add(ad.hadamard(h, t_gate), ad.hadamard(s, c_gate))
        return s

    def forward(self, x):
        x, B, tau = _check_input(x, self.n_vars)
        s = ad.Tensor(np.zeros((B, self.hidden_size)))
        for t in range(tau):
            s = self.step(s, ad.tslice(x, (slice(None), t)))
        return _head(s, self._params["w_out"], self._params["b_out"], B)


def receptive_field(kernel_size, levels):
    """Steps seen by the last output of a stack of two-conv residual blocks."""
    return 1 + 2 * (kernel_size - 1) * (2 ** levels - 1)


def levels_for_window(kernel_size, window):
    """Smallest level count whose receptive field covers ``window``."""
    if kernel_size < 2:
        raise ValueError("kernel size must be >= 2 to grow the receptive field")
    levels = 1
    while receptive_field(kernel_size, levels) < window:
        levels += 1
    return levels


class _TcnStack:
    """Stack of residual blocks; level l runs dilation 2^l."""

    def __init__(self, prefix, n_in, channels, kernel_size, levels, rng, params):
        self.prefix, self.levels, self.kernel_size = prefix, levels, kernel_size
        self.channels = channels
        for l in range(levels):
            c_in = n_in if l == 0 else channels
            params[f"{prefix}f{l}a"] = _uniform(rng, (channels, c_in, kernel_size),
                                                c_in * kernel_size)
            params[f"{prefix}b{l}a"] = _uniform(rng, (channels, 1), c_in * kernel_size)
            params[f"{prefix}f{l}b"] = _uniform(rng, (channels, channels, kernel_size),
                                                channels * kernel_size)
            params[f"{prefix}b{l}b"] = _uniform(rng, (channels, 1), channels * kernel_size)
            if c_in != channels:
                params[f"{prefix}p{l}"] = _uniform(rng, (channels, c_in, 1), c_in)
                params[f"{prefix}pb{l}"] = _uniform(rng, (channels, 1), c_in)
        self._params = params

    def forward(self, x):
        """x: (B, C_in, L) -> (features (B, channels, L), per-level features)."""
        p = self._params
        feats = []
        for l in range(self.levels):
            d = 2 ** l
            h = ad.relu(ad.add(ad.conv1d_dilated_causal(x, p[f"{self.prefix}f{l}a"], d),
                               p[f"{self.prefix}b{l}a"]))
            h = ad.relu(ad.add(ad.conv1d_dilated_causal(h, p[f"{self.prefix}f{l}b"], d),
                               p[f"{self.prefix}b{l}b"]))
            if f"{self.prefix}p{l}" in p:
                res = ad.add(ad.conv1d_dilated_causal(x, p[f"{self.prefix}p{l}"], 1),
                             p[f"{self.prefix}pb{l}"])
            else:
                res = x
            x = ad.relu(ad.add(h, res))
            feats.append(x)
        return x, feats


class Tcn:
    """Dilated causal TCN over the window (channels = variables on entry).

    Head variants: "default" reads the last time step through a linear map;
    "output-attention" soft-attends over the last level's time steps;
    "layerwise-attention" soft-attends over per-level last-step summaries;
    "stack" runs three parallel stacks on the most recent window, window/2
    and window/4 rows and concatenates their last-step features;
    "bidirectional" adds a second stack over the time-reversed window.
    """

    kind = "tcn"

    def __init__(self, n_vars, window, config, rng):
        if config.variant not in TCN_VARIANTS:
            raise ValueError(f"unknown variant {config.variant!r}; pick from {TCN_VARIANTS}")
        self.n_vars, self.window, self.config = n_vars, window, config
        c, k = config.channels, config.kernel_size
        self._params = {}

        def make_stack(prefix, span):
            levels = config.levels if config.levels is not None else levels_for_window(k, span)
            rf = receptive_field(k, levels)
            if config.enforce_receptive_field and rf < span:
                raise ValueError(
                    f"receptive field {rf} does not cover window {span}: "
                    f"need {levels_for_window(k, span)} levels at kernel size {k}")
            return _TcnStack(prefix, n_vars, c, k, levels, rng, self._params)

        if config.variant == "stack":
            spans = [window, max(window // 2, 1), max(window // 4, 1)]
            self._stacks = [make_stack(f"s{i}_", span) for i, span in enumerate(spans)]
            self._spans = spans
            head_in = 3 * c
        elif config.variant == "bidirectional":
            self._stacks = [make_stack("fw_", window), make_stack("bw_", window)]
            head_in = 2 * c
        else:
            self._stacks = [make_stack("", window)]
            head_in = c

        if config.variant in ("output-attention", "layerwise-attention"):
            self._params["v_att"] = _uniform(rng, (c, 1), c)
        self._params["w_out"] = _uniform(rng, (head_in, 1), head_in)
        self._params["b_out"] = _uniform(rng, (1,), head_in)

    def parameters(self):
        return self._params

    def forward(self, x):
        x, B, tau = _check_input(x, self.n_vars)
        p = self._params
        cf = ad.transpose(x, (0, 2, 1))  # channels-first (B, N, L)
        variant = self.config.variant

        if variant == "stack":
            parts = []
            for stack, span in zip(self._stacks, self._spans):
                if span > tau:
                    raise ValueError(f"window {tau} shorter than stack span {span}")
                sub = ad.tslice(cf, (slice(None), slice(None), slice(tau - span, tau)))
                feats, _ = stack.forward(sub)
                parts.append(ad.tslice(feats, (slice(None), slice(None), span - 1)))
            mixed = ad.concat(parts, axis=1)
        elif variant == "bidirectional":
            fw, _ = self._stacks[0].forward(cf)
            bw, _ = self._stacks[1].forward(ad.flip(cf, axis=2))
            mixed = ad.concat(
                [ad.tslice(fw, (slice(None), slice(None), tau - 1)),
                 ad.tslice(bw, (slice(None), slice(None), tau - 1))], axis=1)
        else:
            feats, level_feats = self._stacks[0].forward(cf)
            if variant == "default":
                mixed = ad.tslice(feats, (slice(None), slice(None), tau - 1))
            elif variant == "output-attention":
                scores = ad.reshape(ad.matmul(ad.transpose(feats, (0, 2, 1)), p["v_att"]),
                                    (B, tau))
                alpha = ad.softmax(scores, axis=1)
                mixed = ad.tsum(ad.hadamard(feats, ad.reshape(alpha, (B, 1, tau))), axis=2)
            else:  # layerwise-attention
                last = [ad.reshape(ad.tslice(f, (slice(None), slice(None), tau - 1)),
                                   (B, 1, self.config.channels)) for f in level_feats]
                stacked = ad.concat(last, axis=1)  # (B, levels, C)
                scores = ad.reshape(ad.matmul(stacked, p["v_att"]), (B, len(last)))
                alpha = ad.softmax(scores, axis=1)
                mixed = ad.tsum(ad.hadamard(stacked, ad.reshape(alpha, (B, len(last), 1))),
                                axis=1)
        return _head(mixed, p["w_out"], p["b_out"], B)


_REGISTRY = {
    "lstm": Lstm,
    "gru": Gru,
    "imv-lstm": ImvLstm,
    "antisymmetric-rnn": AntisymmetricRnn,
    "rhn": Rhn,
    "tcn": Tcn,
}


def build_model(kind, n_vars, window, config=None, rng=None):
    """Instantiate a model by kind; ``rng`` is a Generator or a seed."""
    if kind not in _REGISTRY:
        raise ValueError(f"unknown model kind {kind!r}; pick from {MODEL_KINDS}")
    if config is None:
        config = ModelConfig()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return _REGISTRY[kind](n_vars, window, config, rng)


def predict(model, inputs, batch_size=1024):
    """Evaluate the model over (S, window, N) inputs without recording."""
    inputs = np.asarray(inputs, dtype=np.float64)
    out = np.empty(len(inputs))
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            chunk = inputs[start:start + batch_size]
            out[start:start + len(chunk)] = model.forward(ad.Tensor(chunk)).values
    return out


def evaluate_mse(model, dataset, batch_size=1024):
    resid = predict(model, dataset.inputs, batch_size) - dataset.targets
    return float(np.mean(resid * resid))


def train(model, train_set, config: TrainConfig, eval_set=None):
    """Mini-batch MSE training with Adam; deterministic under (seed, config).

    Returns (model, history) where history maps "train" (and "eval" when an
    evaluation split is given) to per-epoch mean squared errors. The train
    entry is the average of the minimized batch losses; the eval entry is
    computed fresh after each epoch. Raises TrainingDivergence naming the
    epoch and batch if the loss stops being finite.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    opt = ad.Adam(list(model.parameters().values()), lr=config.learning_rate)
    history = {"train": []}
    if eval_set is not None:
        history["eval"] = []

    inputs, targets = train_set.inputs, train_set.targets
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            # Shuffling decides batch membership; sorting within the batch
            # keeps reductions order-stable (bit-reproducible losses).
            idx = np.sort(order[start:start + config.batch_size])
            xb = ad.Tensor(np.ascontiguousarray(inputs[idx]))
            yb = ad.Tensor(targets[idx])
            resid = ad.subtract(model.forward(xb), yb)
            loss = ad.tmean(ad.hadamard(resid, resid))
            if not np.isfinite(loss.values):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += float(loss.values) * len(idx)
            seen += len(idx)
        history["train"].append(total / seen)
        if eval_set is not None:
            history["eval"].append(evaluate_mse(model, eval_set))
    return model, history


def save_model(model, path):
    """Checkpoint envelope {kind, config, n_vars, window, params} as JSON."""
    doc = {
        "kind": model.kind,
        "n_vars": model.n_vars,
        "window": model.window,
        "config": asdict(model.config),
        "params": ad.params_to_doc(model.parameters()),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    config = ModelConfig(**doc["config"])
    model = build_model(doc["kind"], doc["n_vars"], doc["window"], config, rng=0)
    restored = ad.params_from_doc(doc["params"])
    params = model.parameters()
    if set(restored) != set(params):
        raise ValueError("checkpoint parameters do not match the model architecture")
    for name, tensor in params.items():
        if tensor.values.shape != restored[name].values.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}")
        tensor.values[...] = restored[name].values
    return model
