"""Graphs, random-graph generators and contact-network ingestion."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np

from .errors import ParameterError, ParseError

log = logging.getLogger(__name__)

MODELS = ("RG", "ER", "BA", "WS", "SBM", "FILE")


@dataclass(eq=False)
class Graph:
    """Undirected, unweighted graph on nodes ``0..n-1``.

    ``edges`` holds pairs ``(i, j)`` with ``i < j``.  ``classes`` optionally
    maps node index to a class label (used for source tracing).
    """

    n: int
    edges: frozenset
    classes: dict | None = None
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"graph needs at least one node, got n={self.n}")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ParameterError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ParameterError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        self.edges = frozenset(norm)
        adj = np.zeros((self.n, self.n))
        if norm:
            ij = np.array(sorted(norm))
            adj[ij[:, 0], ij[:, 1]] = 1.0
            adj[ij[:, 1], ij[:, 0]] = 1.0
        self.adjacency = adj

    @classmethod
    def from_adjacency(cls, adj, classes=None):
        adj = np.asarray(adj)
        i, j = np.nonzero(np.triu(adj, 1))
        return cls(adj.shape[0], frozenset(zip(i.tolist(), j.tolist())), classes)

    @classmethod
    def from_networkx(cls, g, classes=None):
        nodes = sorted(g.nodes())
        if nodes != list(range(len(nodes))):
            raise ParameterError("networkx graph nodes must be 0..n-1")
        return cls(len(nodes), frozenset((u, v) for u, v in g.edges() if u != v), classes)

    @cached_property
    def normalized(self):
        return normalized_adjacency(self)

    @cached_property
    def closed_adjacency(self):
        """A + I, the unnormalized closed-neighbourhood operator."""
        return self.adjacency + np.eye(self.n)

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1)

    def neighbors(self, i):
        return np.flatnonzero(self.adjacency[i])

    def to_networkx(self):
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g


@dataclass
class GraphSpec:
    """A random-graph model, its parameters and a seed.

    params by model:
        RG: n, radius        ER: n, p            BA: n, m
        WS: n, k, p_rewire   SBM: sizes, p_in, p_out
        FILE: path, threshold (contact CSV) or path (graph JSON)
    """

    model: str
    params: dict
    seed: int | None = 0

    def validate(self):
        m, p = self.model, self.params
        if m not in MODELS:
            raise ParameterError(f"unknown graph model {m!r}; expected one of {MODELS}")
        try:
            if m == "FILE":
                if "path" not in p:
                    raise ParameterError("FILE graph needs a path")
                if int(p.get("threshold", 0)) < 0:
                    raise ParameterError("threshold must be >= 0")
                return
            if m == "SBM":
                sizes = [int(s) for s in p["sizes"]]
                if not sizes or min(sizes) < 1:
                    raise ParameterError("SBM block sizes must be positive")
                if "n" in p and int(p["n"]) != sum(sizes):
                    raise ParameterError("SBM block sizes must sum to n")
                _check_prob(p["p_in"], "p_in")
                _check_prob(p["p_out"], "p_out")
                return
            n = int(p["n"])
            if n < 1:
                raise ParameterError("n must be >= 1")
            if m == "RG":
                if not float(p["radius"]) > 0:
                    raise ParameterError("radius must be > 0")
            elif m == "ER":
                _check_prob(p["p"], "p")
            elif m == "BA":
                if not 1 <= int(p["m"]) < n:
                    raise ParameterError("BA needs 1 <= m < n")
            elif m == "WS":
                k = int(p["k"])
                if k % 2 or not 0 <= k < n:
                    raise ParameterError("WS needs even k with 0 <= k < n")
                _check_prob(p["p_rewire"], "p_rewire")
        except KeyError as exc:
            raise ParameterError(f"{m} graph is missing parameter {exc.args[0]!r}") from None

    def to_dict(self):
        return {"model": self.model, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["model"], dict(d.get("params", {})), d.get("seed", 0))


def _check_prob(v, name):
    if not 0.0 <= float(v) <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {v}")


def generate_graph(spec):
    """Draw a graph from ``spec``; the result depends only on (spec, seed)."""
    spec.validate()
    p, seed = spec.params, spec.seed
    if spec.model == "RG":
        # 2-D unit square; see rescale_radius for why not a cube
        g = nx.random_geometric_graph(int(p["n"]), float(p["radius"]), dim=2, seed=seed)
        return Graph.from_networkx(g)
    if spec.model == "ER":
        return Graph.from_networkx(nx.gnp_random_graph(int(p["n"]), float(p["p"]), seed=seed))
    if spec.model == "BA":
        n, m = int(p["n"]), int(p["m"])
        core = nx.complete_graph(max(m, 2))
        if len(core) >= n:
            return Graph.from_networkx(nx.complete_graph(n))
        return Graph.from_networkx(nx.barabasi_albert_graph(n, m, seed=seed, initial_graph=core))
    if spec.model == "WS":
        g = nx.watts_strogatz_graph(int(p["n"]), int(p["k"]), float(p["p_rewire"]), seed=seed)
        return Graph.from_networkx(g)
    if spec.model == "SBM":
        sizes = [int(s) for s in p["sizes"]]
        pin, pout = float(p["p_in"]), float(p["p_out"])
        probs = [[pin if a == b else pout for b in range(len(sizes))] for a in range(len(sizes))]
        g = nx.stochastic_block_model(sizes, probs, seed=seed)
        classes = {v: g.nodes[v]["block"] for v in g.nodes()}
        return Graph.from_networkx(nx.Graph(g), classes)
    path = str(p["path"])
    if path.endswith(".json"):
        return load_graph_json(path)
    return load_contact_network(path, int(p.get("threshold", 0)), n=p.get("n"),
                                drop_isolated=bool(p.get("drop_isolated", False)))


def rescale_radius(n, n0, r0):
    """Radius keeping the expected RG degree fixed when moving from n0 to n nodes.

    The expected degree in the unit square is about ``n * pi * r**2``, so the
    radius scales as ``sqrt(n0 / n)``.
    """
    if n < 1 or n0 < 1 or not r0 > 0:
        raise ParameterError("rescale_radius needs n, n0 >= 1 and r0 > 0")
    return r0 * math.sqrt(n0 / n)


def normalized_adjacency(g):
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_hat = g.adjacency + np.eye(g.n)
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d[:, None] * d[None, :]


def load_contact_network(path, threshold, n=None, drop_isolated=False):
    """Read a contact-count CSV into an unweighted graph.

    The CSV has header ``i,j,count`` and optionally ``class_i,class_j``.  An
    edge is kept iff the summed count for the pair strictly exceeds
    ``threshold``.  By default every node id seen (or ``0..n-1`` if ``n`` is
    given) is kept; ``drop_isolated`` keeps only nodes with at least one
    retained edge and relabels them contiguously in id order.
    """
    if threshold < 0:
        raise ParameterError("threshold must be >= 0")
    counts, classes, seen = {}, {}, set()
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read contact network {path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None:
            header = [h.strip() for h in header]
            if header[:3] != ["i", "j", "count"]:
                raise ParseError(f"expected header 'i,j,count', got {','.join(header)!r}", 1)
        has_cls = header is not None and header[3:5] == ["class_i", "class_j"]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            want = 5 if has_cls else 3
            if len(row) != want:
                raise ParseError(f"expected {want} fields, got {len(row)}", lineno)
            try:
                i, j, c = int(row[0]), int(row[1]), int(row[2])
            except ValueError:
                raise ParseError(f"non-integer field in {row!r}", lineno) from None
            if i < 0 or j < 0 or c < 0:
                raise ParseError("node ids and counts must be non-negative", lineno)
            if i == j:
                raise ParseError(f"self-contact for node {i}", lineno)
            seen.update((i, j))
            key = (min(i, j), max(i, j))
            counts[key] = counts.get(key, 0) + c
            if has_cls:
                classes[i], classes[j] = row[3].strip(), row[4].strip()

    edges = {pair for pair, c in counts.items() if c > threshold}
    if drop_isolated:
        kept = sorted({v for e in edges for v in e})
        remap = {v: k for k, v in enumerate(kept)}
        edges = {(remap[a], remap[b]) for a, b in edges}
        classes = {remap[v]: c for v, c in classes.items() if v in remap}
        size = len(kept)
        log.info("contact network %s: kept %d of %d nodes with contacts > %d",
                 path, size, len(seen), threshold)
    else:
        size = n if n is not None else (max(seen) + 1 if seen else 0)
        if seen and max(seen) >= size:
            raise ParameterError(f"node id {max(seen)} exceeds declared n={size}")
        log.info("contact network %s: %d nodes, %d edges above threshold %d",
                 path, size, len(edges), threshold)
    if size < 1:
        raise ParameterError(f"contact network {path!r} declares no nodes")
    return Graph(int(size), frozenset(edges), classes or None)


def save_graph_json(g, path):
    doc = {"n": g.n, "edges": [list(e) for e in sorted(g.edges)]}
    if g.classes:
        doc["classes"] = {str(k): v for k, v in sorted(g.classes.items())}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_graph_json(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid graph JSON: {exc.msg}", exc.lineno) from None
    try:
        classes = doc.get("classes")
        if classes is not None:
            classes = {int(k): v for k, v in classes.items()}
        return Graph(int(doc["n"]), frozenset(tuple(e) for e in doc["edges"]), classes)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed graph JSON: {exc}") from None
