"""The DDmix graph conditional VAE.

Three graph U-Net based subnetworks share the graph at forward time:

* prior ``p(z | x)``: collapsed observation -> per-node Gaussian over T latents,
* posterior ``q(z | Y)``: full trajectory -> per-node Gaussian over T latents,
* deprojection ``g(x, z)``: observation and latent sample -> N x T infection
  probabilities.

Training draws the latent from the posterior; inference draws it from the
prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Module
from .errors import ParameterError, ShapeError
from .gnn import GcnLayer, GUNet, GUnetConfig

DEFAULT_LOSS_WEIGHTS = (1.0, 1.0, 5e-4, 1.0)
BCE_EPS = 1e-7


@dataclass
class DDmixConfig:
    T: int
    n_features: int = 1
    depth: int = 2
    width: int | None = None
    pool_ratios: tuple = (0.5, 0.5)
    kl_direction: str = "prior||posterior"
    # Output noise scale of the Gaussian likelihood; training uses BCE so this
    # is carried as configuration only.
    sigma_y: float = 1.0
    seed: int = 0
    gate: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ParameterError("T must be >= 1")
        if self.n_features not in (1, 2):
            raise ParameterError("n_features must be 1 or 2")
        if self.kl_direction not in ("prior||posterior", "posterior||prior"):
            raise ParameterError(f"unknown kl_direction {self.kl_direction!r}")
        self.pool_ratios = tuple(float(r) for r in self.pool_ratios)

    @property
    def unet(self):
        w = self.width or self.T
        return GUnetConfig(self.depth, (w,) * (self.depth + 1), self.pool_ratios)

    def to_dict(self):
        return {"T": self.T, "n_features": self.n_features, "depth": self.depth,
                "width": self.width, "pool_ratios": list(self.pool_ratios),
                "kl_direction": self.kl_direction, "sigma_y": self.sigma_y,
                "seed": self.seed, "gate": self.gate}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GaussianField:
    """Per-node diagonal Gaussian, parameterized by mean and log-variance."""

    mu: ad.Tensor
    log_var: ad.Tensor

    def __post_init__(self):
        self.mu, self.log_var = ad.as_tensor(self.mu), ad.as_tensor(self.log_var)
        if self.mu.shape != self.log_var.shape:
            raise ShapeError(f"mu {self.mu.shape} vs log_var {self.log_var.shape}")

    @property
    def sigma(self):
        return np.exp(0.5 * self.log_var.value)


class GaussianNet(Module):
    """Graph U-Net followed by two parallel GCN heads (mean, log-variance)."""

    def __init__(self, d_in, T, unet, rng, gate=True):
        self.gunet = GUNet(d_in, T, unet, "relu", rng, gate)
        self.mu = GcnLayer(T, T, "identity", rng)
        self.log_var = GcnLayer(T, T, "identity", rng)

    def __call__(self, a_norm, h):
        h = self.gunet(a_norm, h)
        return GaussianField(self.mu(a_norm, h), self.log_var(a_norm, h))


class Deprojection(Module):
    def __init__(self, d_in, T, unet, rng, gate=True):
        self.expand = GUNet(d_in, T, unet, "relu", rng, gate)
        self.merge = GUNet(2 * T, T, unet, "identity", rng, gate)

    def __call__(self, a_norm, x, z):
        h = ad.concat_cols(self.expand(a_norm, x), z)
        return ad.sigmoid(self.merge(a_norm, h))


class DDmixModel(Module):
    kind = "ddmix"

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        unet = config.unet
        self.prior = GaussianNet(config.n_features, config.T, unet, rng, config.gate)
        self.posterior = GaussianNet(config.T, config.T, unet, rng, config.gate)
        self.deprojection = Deprojection(config.n_features, config.T, unet, rng, config.gate)

    @property
    def T(self):
        return self.config.T

    def accepts(self, n):
        # graph size is free at inference time
        return True

    # shared training interface -------------------------------------------------

    def training_loss(self, obs, y, graph, rng, weights=DEFAULT_LOSS_WEIGHTS):
        noise = rng.standard_normal((graph.n, self.T))
        return total_loss(obs, y, self, noise, graph, weights)

    def predict(self, obs, graph, rng=None, noise=None):
        if noise is None:
            noise = np.random.default_rng(rng).standard_normal((graph.n, self.T))
        return reconstruct(obs, self, noise, graph)


def _features(x, model):
    feats = x.features() if hasattr(x, "features") else np.asarray(x, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.shape[1] != model.config.n_features:
        raise ShapeError(f"model expects {model.config.n_features} input features, got {feats.shape[1]}")
    return feats


def _operator_for(a_norm, n):
    a = np.asarray(a_norm)
    if a.shape != (n, n):
        raise ShapeError(f"operator {a.shape} for {n} nodes")
    return a


def prior_forward(x, a_norm, model):
    feats = _features(x, model)
    return model.prior(_operator_for(a_norm, feats.shape[0]), feats)


def posterior_forward(y, a_norm, model):
    y = np.asarray(getattr(y, "y", y), dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != model.T:
        raise ShapeError(f"posterior expects N x {model.T} input, got {y.shape}")
    return model.posterior(_operator_for(a_norm, y.shape[0]), y)


def sample_latent(field, noise):
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != field.mu.shape:
        raise ShapeError(f"noise {noise.shape} for latent {field.mu.shape}")
    std = ad.exp(ad.scale(field.log_var, 0.5))
    return ad.add(field.mu, ad.mul(std, noise))


def deprojection_forward(x, z, a_norm, model):
    feats = _features(x, model)
    z = ad.as_tensor(z)
    if z.shape != (feats.shape[0], model.T):
        raise ShapeError(f"latent {z.shape} for {feats.shape[0]} nodes, T={model.T}")
    return model.deprojection(_operator_for(a_norm, feats.shape[0]), feats, z)


def kl_term(prior, post, direction="prior||posterior"):
    """Closed-form KL between diagonal Gaussians, summed over all coordinates.

    The default direction is KL(prior || posterior).
    """
    if prior.mu.shape != post.mu.shape:
        raise ShapeError(f"KL between fields of shape {prior.mu.shape} and {post.mu.shape}")
    p, q = (prior, post) if direction == "prior||posterior" else (post, prior)
    diff = ad.sub(p.mu, q.mu)
    inv_var_q = ad.exp(ad.neg(q.log_var))
    ratio = ad.exp(ad.sub(p.log_var, q.log_var))
    term = ad.add(ad.scale(ad.sub(q.log_var, p.log_var), 0.5),
                  ad.scale(ad.add(ratio, ad.mul(ad.mul(diff, diff), inv_var_q)), 0.5))
    n = term.value.size
    return ad.sub(ad.sum(term), 0.5 * n)


def reconstruction_term(y_hat, y):
    """Binary cross entropy averaged over all N*T entries."""
    y = np.asarray(getattr(y, "y", y), dtype=np.float64)
    y_hat = ad.as_tensor(y_hat)
    if y_hat.shape != y.shape:
        raise ShapeError(f"reconstruction {y_hat.shape} vs target {y.shape}")
    c = ad.clip(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    ll = ad.add(ad.mul(y, ad.log(c)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, c))))
    return ad.neg(ad.mean(ll))


def weight_decay_term(params):
    params = list(params)
    if not params:
        return ad.Tensor(0.0)
    total = ad.sq_norm(params[0])
    for p in params[1:]:
        total = ad.add(total, ad.sq_norm(p))
    return total


def locality_term(y_hat, closed_adj):
    """L1 norm of sum_t [y_t - (A + I) y_{t-1}]_+ over t = 2..T.

    ``closed_adj`` is the unnormalized A + I (a Graph is accepted too).
    """
    if hasattr(closed_adj, "closed_adjacency"):
        closed_adj = closed_adj.closed_adjacency
    y_hat = ad.as_tensor(y_hat)
    n, T = y_hat.shape
    if T < 2:
        return ad.Tensor(0.0)
    prev = ad.select_cols(y_hat, np.arange(T - 1))
    cur = ad.select_cols(y_hat, np.arange(1, T))
    excess = ad.clamp_positive(ad.sub(cur, ad.matmul(closed_adj, prev)))
    return ad.l1_norm(ad.sum(excess, axis=1))


def total_loss(x, y, model, noise, graph, weights=DEFAULT_LOSS_WEIGHTS):
    """Weighted KL + BCE + weight decay + locality, with z from the posterior.

    Returns the scalar loss tensor and a dict of unweighted term values.
    """
    w1, w2, w3, w4 = weights
    a = graph.normalized
    prior = prior_forward(x, a, model)
    post = posterior_forward(y, a, model)
    z = sample_latent(post, noise)
    y_hat = deprojection_forward(x, z, a, model)
    terms = {
        "kl": kl_term(prior, post, model.config.kl_direction),
        "bce": reconstruction_term(y_hat, y),
        "weight_decay": weight_decay_term(model.parameters()),
        "locality": locality_term(y_hat, graph.closed_adjacency),
    }
    loss = None
    for wt, t in zip((w1, w2, w3, w4), terms.values()):
        piece = ad.scale(t, wt)
        loss = piece if loss is None else ad.add(loss, piece)
    breakdown = {k: t.item() for k, t in terms.items()}
    breakdown["total"] = loss.item()
    return loss, breakdown


def reconstruct(x, model, noise, graph):
    """Sample a reconstruction from the prior path; deterministic given noise."""
    a = graph.normalized if hasattr(graph, "normalized") else np.asarray(graph)
    with ad.no_grad():
        prior = prior_forward(x, a, model)
        z = sample_latent(prior, noise)
        return deprojection_forward(x, z, a, model).value
