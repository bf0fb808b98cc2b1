"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import persistence
from .applications import ClassPartition, SpreaderScores, degree_scores, trace_source
from .epidemic import EpidemicParams
from .errors import (CheckpointError, CorruptionError, DDmixError, DegenerateError, NumericError,
                     ParameterError, ParseError, ShapeError, VersionError)
from .experiment import ExperimentError, dumps, run_experiment
from .graphs import GraphSpec, generate_graph, load_contact_network, load_graph_json, save_graph_json
from .model import DDmixConfig, DDmixModel
from .baselines import make_baseline
from .observation import build_dataset
from .training import TrainConfig, evaluate_model, predict_all, train_model

log = logging.getLogger("ddmix")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def exit_code_for(exc):
    if isinstance(exc, ExperimentError):
        exc = exc.cause
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (CorruptionError, VersionError, CheckpointError, ShapeError,
                        DegenerateError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ParameterError, ParseError, KeyError, TypeError, ValueError)):
        return EXIT_CONFIG
    return EXIT_DATA


def _read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


def _write_json(path, doc):
    text = dumps(doc)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _require(args, name):
    val = getattr(args, name.replace("-", "_"))
    if val is None:
        raise ParameterError(f"--{name} is required for this command")
    return val


def _graph(args):
    path = _require(args, "graph-file")
    if path.endswith(".json"):
        return load_graph_json(path)
    return load_contact_network(path, args.threshold)


# commands --------------------------------------------------------------------

def cmd_graph_gen(args):
    params = json.loads(args.params) if args.params else {}
    for key in ("n", "radius", "p", "m", "k", "p_rewire"):
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    spec = GraphSpec(args.graph_model, params, args.seed)
    g = generate_graph(spec)
    save_graph_json(g, _require(args, "out"))
    print(f"graph: {g.n} nodes, {len(g.edges)} edges -> {args.out}")


def cmd_graph_load(args):
    g = load_contact_network(_require(args, "graph-file"), args.threshold,
                             drop_isolated=args.drop_isolated)
    save_graph_json(g, _require(args, "out"))
    print(f"graph: {g.n} nodes, {len(g.edges)} edges -> {args.out}")


def _epidemic(args):
    if args.config:
        return EpidemicParams.from_dict(_read_json(args.config))
    return EpidemicParams.defaults(args.kind)


def cmd_simulate(args):
    g = _graph(args)
    data = build_dataset(g, _epidemic(args), _require(args, "T"), args.count, args.seed,
                         with_aux=args.aux_fraction is not None,
                         aux_fraction=args.aux_fraction or 0.0)
    persistence.save_dataset(data, _require(args, "out"))
    print(f"simulated {len(data)} epidemics on {g.n} nodes -> {args.out}")


def cmd_collapse(args):
    data = persistence.load_dataset(_require(args, "data"))
    obs = np.stack([o.features() for o, _ in data]) if len(data) else np.zeros((0, data.graph.n, 1))
    np.save(_require(args, "out"), obs)
    print(f"{obs.shape[0]} observations of shape {obs.shape[1:]} -> {args.out}")


def _new_model(kind, data, T, seed):
    if kind == "ddmix":
        return DDmixModel(DDmixConfig(T=T, n_features=data.n_features, seed=seed))
    return make_baseline(kind, data.graph.n, T, data.n_features, seed)


def cmd_train(args):
    data = persistence.load_dataset(_require(args, "data"))
    if args.val:
        train, val = data, persistence.load_dataset(args.val)
    else:
        cut = args.n_train or max(1, len(data) // 11)
        train, val = data[:cut], data[cut:]
    cfg = TrainConfig(**{**(_read_json(args.config) if args.config else {}), "seed": args.seed})
    model = _new_model(args.model, data, data.T, args.seed)
    _, hist = train_model(model, train, val, cfg)
    persistence.save_model(model, _require(args, "out"))
    print(f"{args.model}: {hist.stopped_epoch} epochs, best {hist.best_epoch} "
          f"(val {min(hist.val_loss):.5f}) -> {args.out}")


def cmd_evaluate(args):
    model = persistence.load_model(_require(args, "checkpoint"))
    train = persistence.load_dataset(_require(args, "data"))
    test = persistence.load_dataset(_require(args, "test"))
    report = evaluate_model(model, train, test, args.seed)
    _write_json(args.out, report.to_dict())


def cmd_demix(args):
    model = persistence.load_model(_require(args, "checkpoint"))
    data = persistence.load_dataset(_require(args, "data"))
    preds = np.stack(predict_all(model, data, args.seed)) if len(data) else np.zeros((0, data.graph.n, data.T))
    np.save(_require(args, "out"), preds)
    print(f"{preds.shape[0]} reconstructions -> {args.out}")


def _predictions(path):
    arr = np.load(path)
    return arr[None] if arr.ndim == 2 else arr


def cmd_trace_source(args):
    g = _graph(args)
    part = ClassPartition.from_graph(g)
    preds = _predictions(_require(args, "pred"))
    rows = [[s] + trace_source(p, part, args.k) for s, p in enumerate(preds)]
    _write_csv(args.out, ["sample"] + [f"rank{r + 1}" for r in range(args.k)], rows)


def cmd_spreader_score(args):
    g = _graph(args)
    preds = _predictions(_require(args, "pred"))
    base = degree_scores(g)
    rows = []
    for s, p in enumerate(preds):
        sc = SpreaderScores.of(p, g)
        rows += [[s, i, repr(float(sc.s[i])), repr(float(sc.s_norm[i])), repr(float(base[i]))]
                 for i in range(g.n)]
    _write_csv(args.out, ["sample", "node", "s", "s_norm", "degree"], rows)


def cmd_experiment_run(args):
    cfg = _read_json(_require(args, "config"))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.T is not None:
        cfg["T"] = args.T
    if args.model:
        cfg["models"] = [args.model]
    doc = run_experiment(cfg, args.out)
    print(f"experiment complete -> {args.out or cfg.get('out') or '(not written)'}")
    return doc


def _write_csv(path, header, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


# parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--out")
    common.add_argument("--config")
    common.add_argument("--model", help="model kind (default ddmix)",
                        choices=["ddmix", "mlp", "lstm", "cnn-nodes", "cnn-time"])
    common.add_argument("--T", type=int)
    common.add_argument("--graph-file")
    common.add_argument("--threshold", type=int, default=5,
                        help="contact-count cut for CSV contact networks (edge iff count > threshold)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ddmix", description="Demix time-collapsed network epidemics.")
    sub = p.add_subparsers(dest="command", required=True)

    graph = sub.add_parser("graph", help="generate or import graphs")
    gsub = graph.add_subparsers(dest="graph_command", required=True)
    gen = gsub.add_parser("gen", parents=[common], help="draw a random graph")
    gen.add_argument("--graph-model", default="RG", choices=["RG", "ER", "BA", "WS", "SBM"])
    gen.add_argument("--n", type=int)
    gen.add_argument("--radius", type=float)
    gen.add_argument("--p", type=float)
    gen.add_argument("--m", type=int)
    gen.add_argument("--k", type=int)
    gen.add_argument("--p-rewire", dest="p_rewire", type=float)
    gen.add_argument("--params", help="JSON object of model parameters")
    gen.set_defaults(func=cmd_graph_gen)
    load = gsub.add_parser("load", parents=[common], help="import a contact CSV")
    load.add_argument("--drop-isolated", action="store_true")
    load.set_defaults(func=cmd_graph_load)

    sim = sub.add_parser("simulate", parents=[common], help="simulate a dataset archive")
    sim.add_argument("--count", type=int, default=100)
    sim.add_argument("--kind", default="SIRS", choices=["SIR", "SIRS", "SIRSD"])
    sim.add_argument("--aux-fraction", type=float,
                     help="add the first-infection-day channel for this fraction of infected nodes")
    sim.set_defaults(func=cmd_simulate)

    col = sub.add_parser("collapse", parents=[common], help="export observations as .npy")
    col.add_argument("--data")
    col.set_defaults(func=cmd_collapse)

    tr = sub.add_parser("train", parents=[common], help="train a model on an archive")
    tr.add_argument("--data")
    tr.add_argument("--val")
    tr.add_argument("--n-train", type=int)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    ev.add_argument("--checkpoint")
    ev.add_argument("--data", help="training archive (threshold calibration)")
    ev.add_argument("--test")
    ev.set_defaults(func=cmd_evaluate)

    dm = sub.add_parser("demix", parents=[common], help="reconstruct trajectories")
    dm.add_argument("--checkpoint")
    dm.add_argument("--data")
    dm.set_defaults(func=cmd_demix)

    ts = sub.add_parser("trace-source", parents=[common], help="rank source classes")
    ts.add_argument("--pred")
    ts.add_argument("--k", type=int, default=3)
    ts.set_defaults(func=cmd_trace_source)

    ss = sub.add_parser("spreader-score", parents=[common], help="s-scores of reconstructions")
    ss.add_argument("--pred")
    ss.set_defaults(func=cmd_spreader_score)

    ex = sub.add_parser("experiment", help="config-driven experiments")
    esub = ex.add_subparsers(dest="experiment_command", required=True)
    run = esub.add_parser("run", parents=[common], help="run an experiment config")
    run.set_defaults(func=cmd_experiment_run)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.func is not cmd_experiment_run:
        args.seed = 0 if args.seed is None else args.seed
        args.model = args.model or "ddmix"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DDmixError, OSError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
