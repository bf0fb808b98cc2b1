"""Config-driven experiments: generate graphs, simulate, train, evaluate, report.

A config is one JSON document, for example::

    {
      "seed": 0,
      "graph": {"model": "RG", "params": {"n": 100, "radius": 0.3}},
      "epidemic": {"p_infect": 0.5, "p_recover": 0.05, "p_wane": 0.005, "model_kind": "SIRS"},
      "T": 10,
      "models": ["ddmix", "cnn-nodes", "cnn-time"],
      "train": {"max_epochs": 50, "patience": 10},
      "n_train": 100, "n_val": 1000, "n_test": 1000,
      "runs": 1, "folds": 1,
      "metrics": ["acc", "auc", "f1", "fcs", "mse"],
      "sweep": {"param": "radius", "values": [0.25, 0.3, 0.35], "mode": "train_test"},
      "out": "results/density"
    }

``sweep.mode`` is ``train_test`` (a fresh training and test graph per value)
or ``test`` (train once on the base graph, test on one graph per value).
Sweeping ``n`` on RG graphs rescales the radius unless ``"rescale": false``.
Every stochastic stage draws its seed from the master seed, so re-running a
config reproduces ``metrics.json`` byte for byte.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import os

import numpy as np

from .applications import ClassPartition, sourcing_accuracy, spreader_report, trace_source
from .baselines import BASELINE_KINDS, make_baseline, count_parameters
from .epidemic import EpidemicParams
from .errors import DDmixError, ParameterError
from .graphs import GraphSpec, generate_graph, rescale_radius
from .metrics import metric_report, optimal_threshold
from .model import DDmixConfig, DDmixModel
from .observation import build_dataset
from .training import TrainConfig, fold_splits, predict_all, summarize, train_model

log = logging.getLogger(__name__)

METRICS = ("acc", "auc", "f1", "fcs", "mse")
NOT_APPLICABLE = "n/a"
STAGES = ("config", "generate", "simulate", "train", "evaluate", "report")

# stage codes mixed into the master seed
_GRAPH_TRAIN, _GRAPH_TEST, _POOL, _TEST, _INIT, _TRAIN, _EVAL = range(1, 8)


class ExperimentError(DDmixError):
    """An error raised inside one experiment stage; ``cause`` is the original."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(master, *keys):
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


DEFAULTS = {
    "seed": 0,
    "T": 10,
    "epidemic": {"p_infect": 0.5, "p_recover": 0.05, "p_wane": 0.005, "p_death": 0.1,
                 "model_kind": "SIRS"},
    "train": {},
    "n_train": 100,
    "n_val": 1000,
    "n_test": 1000,
    "runs": 1,
    "folds": 1,
    "metrics": list(METRICS),
    "sweep": None,
    "with_aux": False,
    "aux_fraction": 0.3,
    "applications": None,
    "plots": True,
    "out": None,
}


def normalize_config(raw):
    """Fill defaults and validate before any computation."""
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(copy.deepcopy(raw))
    if "graph" not in cfg:
        raise ParameterError("config needs a graph spec")
    models = cfg.get("models")
    if not models:
        raise ParameterError("config lists no models")
    cfg["models"] = [m if isinstance(m, dict) else {"kind": m} for m in models]
    for m in cfg["models"]:
        if m.get("kind") not in ("ddmix",) + BASELINE_KINDS:
            raise ParameterError(f"unknown model kind {m.get('kind')!r}")
    GraphSpec.from_dict(cfg["graph"]).validate()
    EpidemicParams.from_dict(cfg["epidemic"])
    TrainConfig(**cfg["train"])
    unknown = set(cfg["metrics"]) - set(METRICS)
    if unknown:
        raise ParameterError(f"unknown metrics {sorted(unknown)}")
    if int(cfg["T"]) < 1:
        raise ParameterError("T must be >= 1")
    for key in ("n_train", "n_val", "n_test", "runs", "folds"):
        if int(cfg[key]) < 1:
            raise ParameterError(f"{key} must be >= 1")
    sweep = cfg["sweep"]
    if sweep is not None:
        if not sweep.get("values"):
            raise ParameterError("sweep needs a non-empty value list")
        if sweep.get("mode", "train_test") not in ("train_test", "test"):
            raise ParameterError("sweep mode must be train_test or test")
        sweep.setdefault("mode", "train_test")
    return cfg


def _graph_spec(cfg, value, seed):
    spec = GraphSpec.from_dict(cfg["graph"])
    params = dict(spec.params)
    sweep = cfg["sweep"]
    if sweep is not None and value is not None:
        name = sweep["param"]
        if name == "n" and spec.model == "RG" and sweep.get("rescale", True):
            params["radius"] = rescale_radius(int(value), int(params["n"]), float(params["radius"]))
        params[name] = value
    return GraphSpec(spec.model, params, seed)


def _make_model(entry, n, T, n_features, seed):
    kind = entry["kind"]
    opts = {k: v for k, v in entry.items() if k != "kind"}
    if kind == "ddmix":
        return DDmixModel(DDmixConfig(T=T, n_features=n_features, seed=seed, **opts))
    return make_baseline(kind, n, T, n_features, seed)


def _key(value):
    return "base" if value is None else json.dumps(value)


class _Runner:
    def __init__(self, cfg):
        self.cfg = cfg
        self.seed = int(cfg["seed"])
        self.params = EpidemicParams.from_dict(cfg["epidemic"])
        self.T = int(cfg["T"])
        self.stage = "config"

    def graph(self, code, run, idx, value):
        self.stage = "generate"
        return generate_graph(_graph_spec(self.cfg, value, derive_seed(self.seed, code, run, idx)))

    def data(self, g, code, run, idx, count):
        self.stage = "simulate"
        return build_dataset(g, self.params, self.T, count, derive_seed(self.seed, code, run, idx),
                             with_aux=bool(self.cfg["with_aux"]),
                             aux_fraction=float(self.cfg["aux_fraction"]))

    def evaluate(self, model, test, threshold, run, idx):
        self.stage = "evaluate"
        if not model.accepts(test.graph.n):
            return None
        preds = predict_all(model, test, derive_seed(self.seed, _EVAL, run, idx))
        truths = [tr.y for _, tr in test]
        out = metric_report(preds, truths, threshold).to_dict()
        out = {k: out[k] for k in self.cfg["metrics"]}
        apps = self.cfg["applications"]
        if apps is not None and test.graph.classes is not None:
            part = ClassPartition.from_graph(test.graph)
            ks = [int(k) for k in apps.get("k", [1, 3, 5]) if int(k) <= len(part.classes)]
            kmax = max(ks)
            ranked = [(trace_source(p, part, kmax), test.graph.classes[tr.source])
                      for p, (_, tr) in zip(preds, test)]
            for k in ks:
                out[f"top{k}"] = sourcing_accuracy(ranked, k)
            sp = spreader_report(preds, truths, test.graph)
            out["spreader_mse"] = sp["model"]
            out["spreader_mse_degree"] = sp["degree"]
        return out

    def run(self, progress):
        cfg, sweep = self.cfg, self.cfg["sweep"]
        values = [None] if sweep is None else list(sweep["values"])
        per_value_training = sweep is not None and sweep["mode"] == "train_test"
        base_train = dict(cfg["train"])
        cycles = {m["kind"]: {_key(v): [] for v in values} for m in cfg["models"]}
        counts = {}
        for run in range(int(cfg["runs"])):
            train_values = values if per_value_training else [None]
            for ti, tv in enumerate(train_values):
                g = self.graph(_GRAPH_TRAIN, run, ti, tv)
                pool = self.data(g, _POOL, run, ti, int(cfg["n_train"]) + int(cfg["n_val"]))
                tests = {}
                for vi, v in enumerate(values):
                    if per_value_training and v != tv:
                        continue
                    tg = self.graph(_GRAPH_TEST, run, vi, v)
                    tests[_key(v)] = self.data(tg, _TEST, run, vi, int(cfg["n_test"]))
                splits = fold_splits(pool, int(cfg["folds"]), derive_seed(self.seed, _POOL, run, ti, 99),
                                     int(cfg["n_train"]) if int(cfg["folds"]) == 1 else None)
                for fold, (train, val) in enumerate(splits):
                    for mi, entry in enumerate(cfg["models"]):
                        kind = entry["kind"]
                        self.stage = "train"
                        model = _make_model(entry, g.n, self.T, pool.n_features,
                                            derive_seed(self.seed, _INIT, run, ti, fold, mi))
                        counts[kind] = count_parameters(model)
                        tc = TrainConfig(**{**base_train,
                                            "seed": derive_seed(self.seed, _TRAIN, run, ti, fold, mi)})
                        _, hist = train_model(model, train, val, tc)
                        log.info("%s run %d fold %d: stopped at epoch %d (best %d)",
                                 kind, run, fold, hist.stopped_epoch, hist.best_epoch)
                        self.stage = "evaluate"
                        train_pred = predict_all(model, train, derive_seed(self.seed, _EVAL, run, ti, fold))
                        thr = optimal_threshold(np.concatenate([p.ravel() for p in train_pred]),
                                                np.concatenate([tr.y.ravel() for _, tr in train]))
                        for vi, (key, test) in enumerate(tests.items()):
                            res = self.evaluate(model, test, thr, run, vi)
                            cycles[kind][key].append(res)
                        progress(cycles, counts)
        return cycles, counts


def _aggregate(cycles):
    results = {}
    for kind, per_value in cycles.items():
        results[kind] = {}
        for key, runs in per_value.items():
            if not runs or any(r is None for r in runs):
                results[kind][key] = NOT_APPLICABLE
            else:
                results[kind][key] = summarize(runs)
    return results


def _document(cfg, cycles, counts, complete, error=None):
    doc = {
        # the output location is not part of the result
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "complete": complete,
        "parameter_counts": dict(sorted(counts.items())),
        "results": _aggregate(cycles),
        "cycles": {k: {v: [NOT_APPLICABLE if r is None else r for r in rs] for v, rs in pv.items()}
                   for k, pv in cycles.items()},
    }
    if error is not None:
        doc["error"] = error
    return doc


def dumps(doc):
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def table_csv(doc, metric):
    """One row per model, one column per swept value (RFC 4180, CRLF)."""
    results = doc["results"]
    keys = list(next(iter(results.values())).keys()) if results else []
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["model"] + keys)
    for kind, per_value in results.items():
        row = [kind]
        for key in keys:
            cell = per_value[key]
            row.append(NOT_APPLICABLE if cell == NOT_APPLICABLE or metric not in cell
                       else repr(cell[metric]["mean"]))
        w.writerow(row)
    return buf.getvalue()


def line_plot_svg(xs, series, xlabel, ylabel, width=480, height=320):
    """Minimal SVG line chart; ``series`` maps a label to y values (None gaps)."""
    pad = 50
    ys = [y for vals in series.values() for y in vals if y is not None]
    if not ys:
        ys = [0.0, 1.0]
    y0, y1 = min(ys), max(ys)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    xpos = {i: pad + i * (width - 2 * pad) / max(1, len(xs) - 1) for i in range(len(xs))}
    ypos = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
           f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" '
           f'text-anchor="middle">{ylabel}</text>',
           f'<text x="{pad - 5}" y="{ypos(y0):.1f}" text-anchor="end" font-size="10">{y0:.3g}</text>',
           f'<text x="{pad - 5}" y="{ypos(y1):.1f}" text-anchor="end" font-size="10">{y1:.3g}</text>']
    for i, x in enumerate(xs):
        out.append(f'<text x="{xpos[i]:.1f}" y="{height - pad + 15}" text-anchor="middle" '
                   f'font-size="10">{x}</text>')
    for s, (label, vals) in enumerate(series.items()):
        color = colors[s % len(colors)]
        pts = [f"{xpos[i]:.1f},{ypos(y):.1f}" for i, y in enumerate(vals) if y is not None]
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{width - pad + 5}" y="{pad + 15 * s}" fill="{color}" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_reports(doc, out):
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "metrics.json"), dumps(doc))
    for metric in doc["config"]["metrics"]:
        _write(os.path.join(out, f"table_{metric}.csv"), table_csv(doc, metric))
    sweep = doc["config"]["sweep"]
    if doc["config"].get("plots") and sweep is not None and doc["complete"]:
        keys = [_key(v) for v in sweep["values"]]
        for metric in doc["config"]["metrics"]:
            series = {kind: [None if pv[k] == NOT_APPLICABLE else pv[k][metric]["mean"] for k in keys]
                      for kind, pv in doc["results"].items()}
            _write(os.path.join(out, f"plot_{metric}.svg"),
                   line_plot_svg(sweep["values"], series, sweep["param"], metric.upper()))


def run_experiment(config, out=None):
    """Run an experiment from a config dict or JSON path; returns the metrics document.

    Errors are re-raised as ``ExperimentError`` tagged with the failing stage;
    if an output directory is set, whatever finished is written with
    ``"complete": false`` and an ``INCOMPLETE`` marker file.
    """
    if isinstance(config, (str, os.PathLike)):
        with open(config) as fh:
            config = json.load(fh)
    try:
        cfg = normalize_config(config)
    except (DDmixError, KeyError, TypeError, ValueError) as exc:
        raise ExperimentError("config", exc) from exc
    out = out or cfg["out"]
    marker = os.path.join(out, "INCOMPLETE") if out else None
    if marker and os.path.exists(marker):
        os.remove(marker)
    runner = _Runner(cfg)
    state = {"cycles": {}, "counts": {}}

    def progress(cycles, counts):
        state["cycles"], state["counts"] = cycles, counts

    try:
        cycles, counts = runner.run(progress)
    except Exception as exc:
        err = ExperimentError(runner.stage, exc)
        if out:
            doc = _document(cfg, state["cycles"], state["counts"], False, str(err))
            os.makedirs(out, exist_ok=True)
            _write(os.path.join(out, "metrics.json"), dumps(doc))
            _write(marker, str(err) + "\n")
        raise err from exc
    doc = _document(cfg, cycles, counts, True)
    if out:
        runner.stage = "report"
        write_reports(doc, out)
    return doc
