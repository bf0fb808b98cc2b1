"""Graph convolution, top-k graph pooling/unpooling and the graph U-Net.

Layers take the normalized adjacency as a plain array; it never receives
gradients.  After pooling, the operator of the induced subgraph is rebuilt
from the sparsity pattern of the parent operator (entries are positive
exactly on edges and the diagonal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter
from .errors import ParameterError, ShapeError

_ACTIVATIONS = {
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "identity": lambda h: h,
}


def glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _operator(a_norm):
    return a_norm.value if isinstance(a_norm, ad.Tensor) else np.asarray(a_norm, dtype=np.float64)


def renormalize(a_norm):
    """Normalized operator of the closed neighbourhood pattern of ``a_norm``."""
    closed = (_operator(a_norm) > 0).astype(np.float64)
    d = 1.0 / np.sqrt(closed.sum(axis=1))
    return closed * d[:, None] * d[None, :]


class GcnLayer(Module):
    """H = act(A_norm @ H0 @ W)."""

    def __init__(self, d_in, d_out, activation="relu", rng=None):
        if activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(rng)
        self.W = Parameter("W", glorot(rng, d_in, d_out))
        self.activation = activation

    def __call__(self, a_norm, h0):
        return gcn_forward(a_norm, h0, self)


def gcn_forward(a_norm, h0, layer):
    a = _operator(a_norm)
    h0 = ad.as_tensor(h0)
    if a.shape != (h0.shape[0], h0.shape[0]):
        raise ShapeError(f"gcn: operator {a.shape} for {h0.shape[0]} nodes")
    if h0.shape[1] != layer.W.shape[0]:
        raise ShapeError(f"gcn: input has {h0.shape[1]} features, weight expects {layer.W.shape[0]}")
    # A (H W) is cheaper than (A H) W whenever d_out <= d_in, and never worse by much
    out = ad.matmul(a, ad.matmul(h0, layer.W))
    return _ACTIVATIONS[layer.activation](out)


class GPoolLayer(Module):
    """Keeps the k nodes with the largest projection onto ``p``.

    ``k`` is either fixed or derived from ``ratio`` as ``ceil(ratio * n)``.
    With ``gate`` the kept rows are multiplied by ``sigmoid(score)`` so that
    ``p`` receives gradient.
    """

    def __init__(self, d, k=None, ratio=None, gate=True, rng=None):
        if (k is None) == (ratio is None):
            raise ParameterError("give exactly one of k or ratio")
        if ratio is not None and not 0 < ratio <= 1:
            raise ParameterError(f"pool ratio must lie in (0, 1], got {ratio}")
        rng = np.random.default_rng(rng)
        p = rng.normal(size=(d, 1))
        self.p = Parameter("p", p / np.linalg.norm(p))
        self.k = k
        self.ratio = ratio
        self.gate = gate

    def size_for(self, n):
        if self.k is not None:
            return self.k
        return max(1, math.ceil(self.ratio * n - 1e-9))


def _top_k(scores, k, rtol=1e-10):
    """Indices of the k largest scores; ties go to the lower node index.

    Scores within ``rtol`` of each other count as tied, so nodes with equal
    features (common with binary inputs) keep a fixed order even when
    rounding makes their computed scores differ in the last bits.
    """
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tol = rtol * (1.0 + np.max(np.abs(s)))
    # group runs of (near) equal scores and order each run by node index
    run = np.concatenate([[0], np.cumsum(np.diff(s) < -tol)])
    order = order[np.lexsort((order, run))]
    return order[:k]


def gpool_forward(h, a_norm, layer):
    """Returns (pooled features, operator of the induced subgraph, kept indices)."""
    h = ad.as_tensor(h)
    n = h.shape[0]
    k = layer.size_for(n)
    if not 1 <= k <= n:
        raise ParameterError(f"gpool: k={k} for {n} nodes")
    inv_norm = ad.power(ad.sq_norm(layer.p), -0.5)
    scores = ad.mul(ad.matmul(h, layer.p), inv_norm)
    idx = _top_k(scores.value[:, 0], k)
    out = ad.select_rows(h, idx)
    if layer.gate:
        out = ad.mul(out, ad.sigmoid(ad.select_rows(scores, idx)))
    sub = _operator(a_norm)[np.ix_(idx, idx)]
    return out, renormalize(sub), idx


def gunpool_forward(h, idx, n):
    idx = np.asarray(idx, dtype=np.intp)
    if np.unique(idx).size != idx.size:
        raise ParameterError("gunpool: duplicate indices")
    return ad.scatter_rows(h, idx, n)


@dataclass
class GUnetConfig:
    """Graph U-Net shape.

    ``widths[l]`` is the feature width at level l (level 0 is the embedding,
    level l the l-th pooled graph), so ``len(widths) == depth + 1``.
    """

    depth: int = 2
    widths: tuple = (16, 16, 16)
    pool_ratios: tuple = (0.5, 0.5)
    skip_mode: str = "add"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.pool_ratios = tuple(float(r) for r in self.pool_ratios)
        if self.depth < 1:
            raise ParameterError("depth must be >= 1")
        if len(self.widths) != self.depth + 1 or min(self.widths) < 1:
            raise ParameterError(f"need {self.depth + 1} positive widths, got {self.widths}")
        if len(self.pool_ratios) != self.depth:
            raise ParameterError(f"need {self.depth} pool ratios, got {self.pool_ratios}")
        if self.skip_mode != "add":
            raise ParameterError("only additive skips are supported")

    @classmethod
    def uniform(cls, width, depth=2, ratio=0.5):
        return cls(depth, (width,) * (depth + 1), (ratio,) * depth)

    def to_dict(self):
        return {"depth": self.depth, "widths": list(self.widths),
                "pool_ratios": list(self.pool_ratios), "skip_mode": self.skip_mode}


class GUNet(Module):
    """Embedding GCN, ``depth`` (gPool -> GCN) encoder blocks, ``depth``
    (gUnpool -> GCN, + skip) decoder blocks, output GCN."""

    def __init__(self, d_in, d_out, config, out_activation="relu", rng=None, gate=True):
        rng = np.random.default_rng(rng)
        w = config.widths
        self.config = config
        self.embed = GcnLayer(d_in, w[0], "relu", rng)
        self.pools = [GPoolLayer(w[l], ratio=config.pool_ratios[l], gate=gate, rng=rng)
                      for l in range(config.depth)]
        self.down = [GcnLayer(w[l], w[l + 1], "relu", rng) for l in range(config.depth)]
        self.up = [GcnLayer(w[l + 1], w[l], "relu", rng) for l in range(config.depth)]
        self.out = GcnLayer(w[0], d_out, out_activation, rng)

    def __call__(self, a_norm, h0):
        return gunet_forward(a_norm, h0, self)


def gunet_forward(a_norm, h0, net):
    a0 = _operator(a_norm)
    h = net.embed(a0, h0)
    levels = [(h, a0)]
    pooled = []
    a = a0
    for pool, gcn in zip(net.pools, net.down):
        n_prev = h.shape[0]
        h, a, idx = gpool_forward(h, a, pool)
        h = gcn(a, h)
        pooled.append((idx, n_prev))
        levels.append((h, a))
    for l in reversed(range(len(net.up))):
        idx, n_prev = pooled[l]
        skip, a_l = levels[l]
        h = gunpool_forward(h, idx, n_prev)
        h = ad.add(net.up[l](a_l, h), skip)
    return net.out(a0, h)
