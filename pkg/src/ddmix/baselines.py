"""Graph-agnostic comparison models: MLP, bidirectional LSTM, CNN-nodes, CNN-time.

All map an N x F observation to N x T infection probabilities (sigmoid
output) and train on binary cross entropy only.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter
from .errors import ParameterError, ShapeError
from .gnn import glorot
from .model import reconstruction_term

BASELINE_KINDS = ("mlp", "lstm", "cnn-nodes", "cnn-time")


class Linear(Module):
    def __init__(self, d_in, d_out, rng):
        self.W = Parameter("W", glorot(rng, d_in, d_out))
        lim = 1.0 / math.sqrt(d_in)
        self.b = Parameter("b", rng.uniform(-lim, lim, size=(1, d_out)))

    def __call__(self, h):
        return ad.add_bias(ad.matmul(h, self.W), self.b)


def _features(obs, n_features):
    feats = obs.features() if hasattr(obs, "features") else np.asarray(obs, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.shape[1] != n_features:
        raise ShapeError(f"model expects {n_features} input features, got {feats.shape[1]}")
    return feats


class Baseline(Module):
    """Shared training/inference interface; subclasses implement ``forward``."""

    def training_loss(self, obs, y, graph, rng=None, weights=None):
        loss = reconstruction_term(self.forward(obs), y)
        return loss, {"bce": loss.item(), "total": loss.item()}

    def predict(self, obs, graph=None, rng=None, noise=None):
        with ad.no_grad():
            return self.forward(obs).value

    def to_dict(self):
        return dict(self.config)

    def accepts(self, n):
        return True


class MLP(Baseline):
    """Three ReLU hidden layers of sizes NT/4, NT/4, NT and an NT output read
    as the stacked columns of Y."""

    kind = "mlp"

    def __init__(self, n, T, n_features=1, seed=0):
        rng = np.random.default_rng(seed)
        self.config = {"n": n, "T": T, "n_features": n_features, "seed": seed}
        self.n, self.T, self.n_features = n, T, n_features
        h = max(1, n * T // 4)
        self.layers = [Linear(n * n_features, h, rng), Linear(h, h, rng),
                       Linear(h, n * T, rng), Linear(n * T, n * T, rng)]

    def accepts(self, n):
        return n == self.n

    def forward(self, obs):
        feats = _features(obs, self.n_features)
        if feats.shape[0] != self.n:
            raise ShapeError(f"MLP bound to N={self.n}, got N={feats.shape[0]}")
        h = ad.Tensor(feats.T.reshape(1, -1))
        for layer in self.layers[:-1]:
            h = ad.relu(layer(h))
        out = self.layers[-1](h)
        # column-major: entry t*N + i is y_i at step t
        return ad.sigmoid(ad.transpose(ad.reshape(out, (self.T, self.n))))


class LSTMCell(Module):
    def __init__(self, d_in, hidden, rng):
        self.W_in = Parameter("W_in", glorot(rng, d_in, 4 * hidden))
        self.W_h = Parameter("W_h", glorot(rng, hidden, 4 * hidden))
        self.b = Parameter("b", np.zeros((1, 4 * hidden)))
        self.hidden = hidden

    def run(self, inputs, reverse=False):
        """Unroll over a list of 1 x 4H input projections (see ``project``)."""
        H = self.hidden
        sl = [np.arange(k * H, (k + 1) * H) for k in range(4)]
        h = ad.Tensor(np.zeros((1, H)))
        c = ad.Tensor(np.zeros((1, H)))
        order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
        outs = [None] * len(inputs)
        for t in order:
            gates = ad.add(inputs[t], ad.matmul(h, self.W_h))
            i = ad.sigmoid(ad.select_cols(gates, sl[0]))
            f = ad.sigmoid(ad.select_cols(gates, sl[1]))
            g = ad.tanh(ad.select_cols(gates, sl[2]))
            o = ad.sigmoid(ad.select_cols(gates, sl[3]))
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            outs[t] = h
        return outs

    def project(self, x):
        return ad.add_bias(ad.matmul(x, self.W_in), self.b)


class LSTM(Baseline):
    """One-to-many bidirectional LSTM: x is fed at every one of T steps
    through 2 layers of 2N units per direction; a per-step linear head gives
    the N infection probabilities of that step."""

    kind = "lstm"

    def __init__(self, n, T, n_features=1, seed=0):
        rng = np.random.default_rng(seed)
        self.config = {"n": n, "T": T, "n_features": n_features, "seed": seed}
        self.n, self.T, self.n_features = n, T, n_features
        hid = 2 * n
        self.l1_fwd = LSTMCell(n * n_features, hid, rng)
        self.l1_bwd = LSTMCell(n * n_features, hid, rng)
        self.l2_fwd = LSTMCell(2 * hid, hid, rng)
        self.l2_bwd = LSTMCell(2 * hid, hid, rng)
        self.head = Linear(2 * hid, n, rng)

    def accepts(self, n):
        return n == self.n

    def forward(self, obs):
        feats = _features(obs, self.n_features)
        if feats.shape[0] != self.n:
            raise ShapeError(f"LSTM bound to N={self.n}, got N={feats.shape[0]}")
        x = ad.Tensor(feats.T.reshape(1, -1))
        fwd_in = self.l1_fwd.project(x)
        bwd_in = self.l1_bwd.project(x)
        h1 = [ad.concat_cols(a, b) for a, b in zip(self.l1_fwd.run([fwd_in] * self.T),
                                                    self.l1_bwd.run([bwd_in] * self.T, reverse=True))]
        seq = ad.concat_rows(*h1)
        fwd2 = self.l2_fwd.project(seq)
        bwd2 = self.l2_bwd.project(seq)
        rows = lambda m: [ad.select_rows(m, [t]) for t in range(self.T)]
        h2 = [ad.concat_cols(a, b) for a, b in zip(self.l2_fwd.run(rows(fwd2)),
                                                    self.l2_bwd.run(rows(bwd2), reverse=True))]
        out = self.head(ad.concat_rows(*h2))
        return ad.sigmoid(ad.transpose(out))


def _shift_rows(h, offset):
    """Rows shifted by ``offset`` with zero fill: out[n] = h[n + offset]."""
    n, c = h.shape
    if n == 1:
        return ad.Tensor(np.zeros((1, c)))
    zeros = ad.Tensor(np.zeros((1, c)))
    if offset < 0:
        return ad.concat_rows(zeros, ad.select_rows(h, np.arange(n - 1)))
    return ad.concat_rows(ad.select_rows(h, np.arange(1, n)), zeros)


class DepthwiseConv(Module):
    """Kernel-3, stride-1, zero-padded convolution along the node axis.

    Each input channel has its own 3-tap filter.  Output channel o reads the
    filtered input channel ``o * c_in // c_out`` and adds its own bias, so the
    channel count can grow without cross-channel weights.  Taps and biases
    start uniform in +-1/sqrt(3) (fan-in of one 3-tap filter); distinct biases
    keep the channels fed by one filter from starting out identical.
    """

    def __init__(self, c_in, c_out, rng):
        lim = 1.0 / math.sqrt(3.0)
        self.taps = Parameter("taps", rng.uniform(-lim, lim, size=(3, c_in)))
        self.b = Parameter("b", rng.uniform(-lim, lim, size=(1, c_out)))
        self.src = np.arange(c_out) * c_in // c_out

    def __call__(self, h):
        tap = lambda k: ad.select_rows(self.taps, [k])
        filt = ad.add(ad.add(ad.mul(_shift_rows(h, -1), tap(0)), ad.mul(h, tap(1))),
                      ad.mul(_shift_rows(h, 1), tap(2)))
        return ad.add_bias(ad.select_cols(filt, self.src), self.b)


class CNNNodes(Baseline):
    """Depthwise 1-D convolutions over the node index, channels F -> T/4 -> T/2 -> T."""

    kind = "cnn-nodes"

    def __init__(self, T, n_features=1, seed=0):
        rng = np.random.default_rng(seed)
        self.config = {"T": T, "n_features": n_features, "seed": seed}
        self.T, self.n_features = T, n_features
        chans = [n_features, max(1, T // 4), max(1, T // 2), T]
        self.convs = [DepthwiseConv(chans[i], chans[i + 1], rng) for i in range(3)]

    def forward(self, obs):
        h = ad.Tensor(_features(obs, self.n_features))
        for conv in self.convs[:-1]:
            h = ad.relu(conv(h))
        return ad.sigmoid(self.convs[-1](h))


class TransposedConv(Module):
    """Transposed 1-D convolution with kernel == stride == s.

    Activations are stored as (nodes * length) x channels; each input row
    spawns s output rows, so the op is a matmul followed by a row-major
    reshape.  Biases start uniform in +-1/sqrt(c_in) so that a node with
    x = 0 does not sit exactly on every ReLU kink.
    """

    def __init__(self, c_in, c_out, stride, rng):
        self.W = Parameter("W", glorot(rng, c_in, c_out * stride))
        lim = 1.0 / math.sqrt(c_in)
        self.b = Parameter("b", rng.uniform(-lim, lim, size=(1, c_out)))
        self.stride, self.c_out = stride, c_out

    def __call__(self, h):
        out = ad.matmul(h, self.W)
        out = ad.reshape(out, (h.shape[0] * self.stride, self.c_out))
        return ad.add_bias(out, self.b)


class CNNTime(Baseline):
    """Per-node upsampling of the scalar observation to length T.

    Six blocks: four stride-2 transposed convolutions (lengths 2, 4, 8, 16),
    a fifth with stride ceil(T/16) and a pointwise projection to one channel,
    cropped to the first T steps.  Weights are shared across nodes.
    """

    kind = "cnn-time"

    def __init__(self, T, n_features=1, channels=16, seed=0):
        rng = np.random.default_rng(seed)
        self.config = {"T": T, "n_features": n_features, "channels": channels, "seed": seed}
        self.T, self.n_features = T, n_features
        strides = [2, 2, 2, 2, max(1, math.ceil(T / 16))]
        self.length = int(np.prod(strides))
        c = channels
        self.blocks = [TransposedConv(n_features, c, 2, rng)]
        self.blocks += [TransposedConv(c, c, s, rng) for s in strides[1:]]
        self.proj = TransposedConv(c, 1, 1, rng)

    def forward(self, obs):
        feats = _features(obs, self.n_features)
        n = feats.shape[0]
        h = ad.Tensor(feats)
        for block in self.blocks:
            h = ad.relu(block(h))
        out = ad.reshape(self.proj(h), (n, self.length))
        return ad.sigmoid(ad.select_cols(out, np.arange(self.T)))


def count_parameters(model):
    if model is None:
        return 0
    return int(sum(p.value.size for p in model.parameters()))


def make_baseline(kind, n, T, n_features=1, seed=0):
    if kind == "mlp":
        return MLP(n, T, n_features, seed)
    if kind == "lstm":
        return LSTM(n, T, n_features, seed)
    if kind == "cnn-nodes":
        return CNNNodes(T, n_features, seed)
    if kind == "cnn-time":
        return CNNTime(T, n_features, seed=seed)
    raise ParameterError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")


# thin functional wrappers
def mlp_forward(x, model):
    return model.forward(x)


def lstm_forward(x, model):
    return model.forward(x)


def cnn_nodes_forward(x, model):
    return model.forward(x)


def cnn_time_forward(x, model):
    return model.forward(x)
