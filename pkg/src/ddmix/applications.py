"""Post-processing of reconstructions: source-class tracing and spreader scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass
class ClassPartition:
    """Mapping class id -> node indices; must partition 0..n-1."""

    classes: dict

    def __post_init__(self):
        self.classes = {c: np.asarray(sorted(nodes), dtype=np.intp)
                        for c, nodes in sorted(self.classes.items())}
        if not self.classes:
            raise ParameterError("empty partition")
        allnodes = np.concatenate(list(self.classes.values()))
        if np.unique(allnodes).size != allnodes.size:
            raise ParameterError("classes overlap")
        if allnodes.size and not np.array_equal(np.sort(allnodes), np.arange(allnodes.size)):
            raise ParameterError("classes must cover nodes 0..n-1")

    @property
    def n(self):
        return int(sum(v.size for v in self.classes.values()))

    def class_of(self, node):
        for c, nodes in self.classes.items():
            if node in nodes:
                return c
        raise ParameterError(f"node {node} not in partition")

    @classmethod
    def from_labels(cls, labels):
        labels = np.asarray(labels)
        return cls({int(c): np.flatnonzero(labels == c) for c in np.unique(labels)})

    @classmethod
    def from_graph(cls, g):
        if g.classes is None:
            raise ParameterError("graph carries no class labels")
        return cls.from_labels([g.classes[i] for i in range(g.n)])


def first_alarm_step(y_hat, level=0.5):
    """First step with some entry above ``level``; else the step with the
    largest single prediction."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    hot = np.flatnonzero((y_hat > level).any(axis=0))
    if hot.size:
        return int(hot[0])
    return int(np.argmax(y_hat.max(axis=0)))


def trace_source(y_hat, partition, k=1):
    """Top-k class ids ranked by their largest prediction on the first alarm step."""
    if not isinstance(partition, ClassPartition):
        partition = ClassPartition(partition)
    ids = list(partition.classes)
    if not 1 <= k <= len(ids):
        raise ParameterError(f"k={k} for {len(ids)} classes")
    y_hat = np.asarray(y_hat, dtype=np.float64)
    col = y_hat[:, first_alarm_step(y_hat)]
    score = np.array([col[partition.classes[c]].max() if partition.classes[c].size else -np.inf
                      for c in ids])
    # ids are sorted ascending, so a stable sort on -score breaks ties by class id
    order = np.argsort(-score, kind="stable")
    return [ids[i] for i in order[:k]]


def sourcing_accuracy(results, k):
    """Fraction of (ranking, true class) pairs whose truth is among the first k."""
    results = list(results)
    if not results:
        return 0.0
    return float(np.mean([truth in list(ranking)[:k] for ranking, truth in results]))


def s_score(y, g, literal=False):
    """Spreader score: credit for infections newly appearing among each node's
    neighbours.

    A new infection of j between t and t+1 (amount ``[y_j(t+1) - y_j(t)]_+``)
    is split across j's neighbours in proportion to their infection level
    y_i(t), so the credits of one event sum to the event size.  With
    ``literal`` every neighbour receives the full fraction regardless of its
    own state.  Terms with a zero denominator contribute nothing.
    """
    y = np.asarray(y, dtype=np.float64)
    a = g.adjacency if hasattr(g, "adjacency") else np.asarray(g, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != a.shape[0]:
        raise ParameterError(f"trajectory {y.shape} for {a.shape[0]} nodes")
    s = np.zeros(y.shape[0])
    for t in range(y.shape[1] - 1):
        rise = np.maximum(y[:, t + 1] - y[:, t], 0.0)
        denom = a @ y[:, t]
        frac = np.divide(rise, denom, out=np.zeros_like(rise), where=denom > 0)
        credit = a @ frac
        s += credit if literal else y[:, t] * credit
    return s


def normalize_s_score(s):
    """Map [0, inf) onto [0, 1) via 2 / (1 + exp(-s)) - 1 = tanh(s / 2)."""
    return np.tanh(0.5 * np.asarray(s, dtype=np.float64))


def degree_scores(g):
    """Degree centrality deg / (n - 1), the topology-only reference score."""
    deg = np.asarray(g.degrees, dtype=np.float64)
    return deg / max(1, deg.size - 1)


def spreader_mse(pred_scores, true_scores):
    p = np.asarray(pred_scores, dtype=np.float64).ravel()
    q = np.asarray(true_scores, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ParameterError(f"score lengths differ: {p.size} vs {q.size}")
    return float(np.mean((p - q) ** 2))


@dataclass
class SpreaderScores:
    s: np.ndarray
    s_norm: np.ndarray

    @classmethod
    def of(cls, y, g, literal=False):
        s = s_score(y, g, literal)
        return cls(s, normalize_s_score(s))


def spreader_report(preds, truths, g):
    """Mean spreader MSE of reconstructions and of the degree baseline."""
    base = degree_scores(g)
    model, degree = [], []
    for y_hat, y in zip(preds, truths):
        target = normalize_s_score(s_score(y, g))
        model.append(spreader_mse(normalize_s_score(s_score(y_hat, g)), target))
        degree.append(spreader_mse(base, target))
    return {"model": float(np.mean(model)), "degree": float(np.mean(degree))}
