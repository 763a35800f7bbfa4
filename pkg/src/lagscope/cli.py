"""Command-line front end: generate, train, explain, graph, score, gradcheck.

Every command writes its fully-resolved parameters to ``config.json`` inside
the output directory; re-running any command from that file (``--config``)
reproduces the artifacts byte for byte. Heavy imports happen after thread
setup so ``LAGSCOPE_THREADS`` can cap numeric parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def _configure_threads():
    cap = os.environ.get("LAGSCOPE_THREADS")
    if not cap:
        return
    try:
        if int(cap) < 1:
            raise ValueError
    except ValueError:
        raise SystemExit(f"LAGSCOPE_THREADS must be a positive integer, got {cap!r}")
    for var in _THREAD_VARS:
        os.environ.setdefault(var, cap)


class _Parser(argparse.ArgumentParser):
    """argparse front end that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    parser = _Parser(prog="lagscope",
                     description="Lagged-dependency discovery workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None,
                       help="resolved-config JSON to re-run from")
        return p

    p = add("gen-linear", "sample a random linear system and simulate it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--length", type=int, default=None, help="series length T")

    p = add("gen-nonlinear", "simulate the fixed nonlinear benchmark system")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--length", type=int, default=None, help="series length T")

    p = add("train", "fit one sequence regressor for a target variable")
    p.add_argument("--data", default=None, help="series CSV")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--tau", type=int, default=None, help="window length")
    p.add_argument("--model", default=None, choices=sorted(_model_kinds()),
                   dest="model_kind")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--raw", action="store_const", const=True, default=None,
                   help="skip per-variable standardization")

    p = add("explain", "learn a binary importance mask for a trained model")
    p.add_argument("--data", default=None, help="series CSV")
    p.add_argument("--model-in", default=None, help="checkpoint from `train`")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--preset", default=None, choices=("linear", "nonlinear"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--raw", action="store_const", const=True, default=None)

    p = add("graph", "discover the dependency graph around a target")
    p.add_argument("--data", default=None, help="series CSV")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--model", default=None, choices=sorted(_model_kinds()),
                   dest="model_kind")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--preset", default=None, choices=("linear", "nonlinear"))
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--raw", action="store_const", const=True, default=None)

    p = add("score", "score a discovered graph against a ground-truth graph")
    p.add_argument("--graph", default=None, dest="graph_path",
                   help="knowledge-graph JSON from `graph`")
    p.add_argument("--truth", default=None, help="truth JSON from `gen-*`")
    p.add_argument("--tolerance", type=int, default=None)

    p = add("gradcheck", "finite-difference check of every op and model")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None)

    return parser


def _model_kinds():
    return ("lstm", "gru", "imv-lstm", "antisymmetric-rnn", "rhn", "tcn")


_DEFAULTS = {
    "gen-linear": {"seed": 0, "length": 10000},
    "gen-nonlinear": {"seed": 0, "length": 30000},
    "train": {"data": None, "target": 0, "tau": 300, "model_kind": "tcn",
              "epochs": 10, "seed": 0, "train_fraction": 0.8, "raw": False},
    "explain": {"data": None, "model_in": None, "target": 0, "preset": "linear",
                "seed": 0, "train_fraction": 0.8, "raw": False},
    "graph": {"data": None, "target": 0, "tau": 300, "model_kind": "tcn",
              "epochs": 10, "preset": "linear", "depth": 2, "seed": 0,
              "train_fraction": 0.8, "raw": False},
    "score": {"graph_path": None, "truth": None, "tolerance": 5},
    "gradcheck": {"seed": 0, "tolerance": 1e-5},
}


def _resolve(args):
    """Merge CLI flags over --config contents over built-in defaults."""
    params = dict(_DEFAULTS[args.command])
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("command") != args.command:
            raise ValueError(
                f"config is for {doc.get('command')!r}, not {args.command!r}")
        for key in params:
            if key in doc:
                params[key] = doc[key]
    for key in params:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    missing = [k for k, v in params.items() if v is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ValueError(f"missing required arguments: {flags}")
    return params


def _write_config(out_dir, command, params):
    doc = {"command": command, **params}
    path = os.path.join(out_dir, "config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_series(path, raw):
    from . import series as se
    data = se.load_csv(path)
    if not raw:
        data, _, _ = se.standardize(data)
    return data


def _split_windows(data, target, tau, fraction):
    from . import series as se
    dataset = se.make_windows(data, target_index=target, window=tau)
    return se.split_train_test(dataset, fraction)


def cmd_gen_linear(out, p):
    from . import series as se
    from . import synth as sy
    graph, series = sy.generate_linear_case(p["seed"], p["length"])
    se.save_csv(series, os.path.join(out, "series.csv"))
    sy.save_graph(graph, os.path.join(out, "truth.json"))
    print(f"generated linear system: N={graph.n_vars}, "
          f"{len(graph.edges)} edges, T={p['length']}")
    return 0


def cmd_gen_nonlinear(out, p):
    from . import series as se
    from . import synth as sy
    series, graph = sy.simulate_nonlinear(p["length"], seed=p["seed"])
    se.save_csv(series, os.path.join(out, "series.csv"))
    sy.save_graph(graph, os.path.join(out, "truth.json"))
    print(f"generated nonlinear system: N={graph.n_vars}, T={p['length']}")
    return 0


def cmd_train(out, p):
    from . import models as md
    data = _load_series(p["data"], p["raw"])
    train_set, test_set = _split_windows(data, p["target"], p["tau"],
                                         p["train_fraction"])
    model = md.build_model(p["model_kind"], data.N, p["tau"],
                           rng=[p["seed"], p["target"]])
    cfg = md.TrainConfig(epochs=p["epochs"], seed=p["seed"])
    model, history = md.train(model, train_set, cfg, eval_set=test_set)
    md.save_model(model, os.path.join(out, "model.json"))
    with open(os.path.join(out, "history.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "test_mse"])
        for i, (tr, ev) in enumerate(zip(history["train"], history["eval"]), 1):
            writer.writerow([i, repr(tr), repr(ev)])
    print(f"trained {p['model_kind']}: final train mse {history['train'][-1]:.6g}, "
          f"test mse {history['eval'][-1]:.6g}")
    return 0


def cmd_explain(out, p):
    from . import lbm as lb
    from . import models as md
    model = md.load_model(p["model_in"])
    data = _load_series(p["data"], p["raw"])
    _, test_set = _split_windows(data, p["target"], model.window,
                                 p["train_fraction"])
    mask = lb.estimate_importance(model, test_set, lb.PRESETS[p["preset"]],
                                  seed=p["seed"])
    deps = lb.extract_dependencies(mask, p["target"], model.window)
    lb.export_soft_csv(mask.soft, os.path.join(out, "soft.csv"))
    lb.export_binary_csv(mask.binary, os.path.join(out, "binary.csv"))
    lb.render_heatmap(mask.soft, os.path.join(out, "heatmap.pgm"))
    doc = {
        "target": p["target"],
        "threshold": mask.threshold,
        "dependencies": [
            {"source": d.source, "present": d.present, "lags": list(d.lags)}
            for d in deps
        ],
    }
    with open(os.path.join(out, "dependencies.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    flagged = [d.source for d in deps if d.present]
    print(f"threshold {mask.threshold}: flagged sources {flagged}")
    return 0


def cmd_graph(out, p):
    from . import discovery as dc
    from . import lbm as lb
    from . import models as md
    data = _load_series(p["data"], p["raw"])
    cfg = dc.DiscoveryConfig(
        model_kind=p["model_kind"],
        train=md.TrainConfig(epochs=p["epochs"]),
        mask=lb.PRESETS[p["preset"]],
        window=p["tau"], train_fraction=p["train_fraction"],
        depth_limit=p["depth"], standardize=False)
    graph = dc.discover(data, p["target"], cfg, seed=p["seed"])
    dc.save_graph(graph, os.path.join(out, "graph.json"))
    print(f"graph: {len(graph.nodes)} modelled nodes, {len(graph.edges)} edges")
    return 0


def cmd_score(out, p):
    from . import discovery as dc
    from . import synth as sy
    with open(p["graph_path"], encoding="utf-8") as fh:
        doc = json.load(fh)
    target = doc["target"]
    predicted = [dc.GraphEdge(e["src"], e["dst"], tuple(e["lags"]), e["depth"])
                 for e in doc["edges"] if e["depth"] == 1 and e["dst"] == target]
    truth = sy.load_graph(p["truth"])
    pairs = [(e.source, e.lag) for e in truth.edges_into(target)]
    score = dc.score_edges(predicted, pairs,
                           dc.EdgeMatchConfig(tolerance=p["tolerance"]))
    dc.save_score(score, os.path.join(out, "score.json"))
    print(f"precision {score['precision']:.6g}, recall {score['recall']:.6g} "
          f"at tolerance {score['tolerance']}")
    return 0


def cmd_gradcheck(out, p):
    from . import gradcheck as gc
    results, n_points, passed = gc.run_all(p["seed"], tolerance=p["tolerance"])
    worst = max(err for _, err, _ in results)
    doc = {
        "points": n_points,
        "tolerance": p["tolerance"],
        "max_relative_error": worst,
        "passed": passed,
        "cases": [{"name": name, "max_relative_error": err, "points": n}
                  for name, err, n in results],
    }
    with open(os.path.join(out, "gradcheck.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, err, _ in results:
        print(f"{name}: {err:.3e}")
    print(f"checked {n_points} points, max relative error {worst:.3e} "
          f"({'pass' if passed else 'FAIL'})")
    return 0 if passed else 2


_COMMANDS = {
    "gen-linear": cmd_gen_linear,
    "gen-nonlinear": cmd_gen_nonlinear,
    "train": cmd_train,
    "explain": cmd_explain,
    "graph": cmd_graph,
    "score": cmd_score,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    _configure_threads()
    args = build_parser().parse_args(argv)
    from .models import TrainingDivergence
    from .synth import InstabilityError
    try:
        params = _resolve(args)
        os.makedirs(args.out, exist_ok=True)
        _write_config(args.out, args.command, params)
        return _COMMANDS[args.command](args.out, params)
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"lagscope {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, TrainingDivergence, InstabilityError) as exc:
        print(f"lagscope {args.command}: numerical abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
