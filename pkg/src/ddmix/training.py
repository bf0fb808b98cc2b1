"""Adam, the early-stopping training loop and the cross-validation protocol."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericError, ParameterError, StateError
from .metrics import metric_report, optimal_threshold
from .model import DEFAULT_LOSS_WEIGHTS, reconstruction_term

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    loss_weights: tuple = DEFAULT_LOSS_WEIGHTS

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if not self.lr > 0:
            raise ParameterError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise ParameterError("patience must not exceed max_epochs")
        if len(self.loss_weights) != 4:
            raise ParameterError("loss_weights needs four entries")

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, applied to the arrays in ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise StateError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise StateError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


class Adam:
    def __init__(self, params, config):
        self.params = list(params)
        self.config = config
        self.state = AdamState.for_params([p.value for p in self.params])

    def step(self):
        adam_step([p.value for p in self.params], [p.grad for p in self.params],
                  self.state, self.config)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_terms: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    wall_time: float = 0.0


def validation_loss(model, data, seed=0):
    """Mean BCE of inference-mode predictions (prior path for DDmix).

    Latent noise is drawn from a generator seeded with ``seed`` so repeated
    calls are comparable across epochs.
    """
    rng = np.random.default_rng(seed)
    total = 0.0
    with ad.no_grad():
        for obs, tr in data:
            y_hat = model.predict(obs, data.graph, rng)
            total += reconstruction_term(y_hat, tr.y).item()
    return total / len(data)


def dataset_loss(model, data, weights=DEFAULT_LOSS_WEIGHTS, seed=0):
    """Mean training objective over ``data`` with seeded noise (no updates)."""
    rng = np.random.default_rng(seed)
    total = 0.0
    with ad.no_grad():
        for obs, tr in data:
            loss, _ = model.training_loss(obs, tr.y, data.graph, rng, weights)
            total += loss.item()
    return total / len(data)


def train_model(model, train_set, val_set, config):
    """Minibatch Adam with early stopping on validation loss.

    Stops after ``max_epochs`` or once ``patience`` consecutive epochs fail to
    improve the best validation loss, then restores the best parameters.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ParameterError("training and validation sets must be non-empty")
    start = time.perf_counter()
    params = model.parameters()
    opt = Adam(params, config)
    rng = np.random.default_rng(config.seed)
    noise_rng = np.random.default_rng([config.seed, 1])
    val_seed = config.seed + 7919
    hist = History()
    best, best_state, bad = np.inf, model.state_dict(), 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        sums, n_seen = {}, 0
        try:
            for lo in range(0, len(order), config.batch_size):
                batch = order[lo:lo + config.batch_size]
                opt.zero_grad()
                for i in batch:
                    obs, tr = train_set[i]
                    loss, terms = model.training_loss(obs, tr.y, train_set.graph, noise_rng,
                                                      config.loss_weights)
                    ad.backward(ad.scale(loss, 1.0 / len(batch)))
                    for k, v in terms.items():
                        sums[k] = sums.get(k, 0.0) + v
                    n_seen += 1
                for p in params:
                    if not np.isfinite(p.grad).all():
                        raise NumericError("non-finite gradient")
                opt.step()
            val = validation_loss(model, val_set, val_seed)
            if not np.isfinite(val):
                raise NumericError("non-finite validation loss")
        except NumericError as exc:
            hist.stopped_epoch = epoch
            hist.wall_time = time.perf_counter() - start
            model.load_state_dict(best_state)
            exc.history = hist
            raise

        terms = {k: v / n_seen for k, v in sums.items()}
        hist.train_loss.append(terms["total"])
        hist.train_terms.append(terms)
        hist.val_loss.append(val)
        hist.stopped_epoch = epoch
        log.debug("epoch %d train %.5f val %.5f", epoch, terms["total"], val)
        if val < best:
            best, best_state, bad = val, model.state_dict(), 0
            hist.best_epoch = epoch
        else:
            bad += 1
            if bad >= config.patience:
                break

    model.load_state_dict(best_state)
    hist.wall_time = time.perf_counter() - start
    return model, hist


def predict_all(model, data, seed=0):
    rng = np.random.default_rng(seed)
    return [model.predict(obs, data.graph, rng) for obs, _ in data]


def evaluate_model(model, train_set, test_set, seed=0):
    """Threshold on training predictions, then score the test set."""
    train_pred = predict_all(model, train_set, seed)
    thr = optimal_threshold(np.concatenate([p.ravel() for p in train_pred]),
                            np.concatenate([tr.y.ravel() for _, tr in train_set]))
    test_pred = predict_all(model, test_set, seed + 1)
    return metric_report(test_pred, [tr.y for _, tr in test_set], thr)


def fold_splits(pool, folds, seed, holdout=None):
    """Yield ``(train, val)`` pairs for one run.

    With ``folds > 1`` the shuffled pool is cut into ``folds`` parts and each
    part validates once.  With ``folds == 1`` the first ``holdout`` samples
    train and the rest validate; without ``holdout`` the pool does both.
    """
    if folds == 1:
        if holdout is None:
            yield pool, pool
        else:
            if not 0 < holdout < len(pool):
                raise ParameterError(f"holdout {holdout} for a pool of {len(pool)}")
            yield pool[:holdout], pool[holdout:]
        return
    if folds > len(pool):
        raise ParameterError(f"{folds} folds for {len(pool)} samples")
    order = np.random.default_rng(seed).permutation(len(pool))
    parts = np.array_split(order, folds)
    for fold in range(folds):
        rest = np.concatenate([parts[j] for j in range(folds) if j != fold])
        yield pool.subset(rest), pool.subset(parts[fold])


def cross_validate(model_factory, dataset_factory, runs=3, folds=3, config=None,
                   evaluate=evaluate_model, holdout=None):
    """Repeated k-fold protocol.

    ``dataset_factory(run)`` returns ``(pool, test_set)``; every split of the
    pool (see ``fold_splits``) trains a fresh ``model_factory(run, fold)``
    that is then scored on the test set.  Returns ``(summary, cycles)`` where
    summary maps each metric to ``{"mean", "std"}`` over the ``runs * folds``
    cycles.
    """
    if runs < 1 or folds < 1:
        raise ParameterError("runs and folds must be >= 1")
    config = config or TrainConfig()
    cycles = []
    for run in range(runs):
        pool, test = dataset_factory(run)
        for fold, (train, val) in enumerate(fold_splits(pool, folds, [config.seed, run], holdout)):
            model = model_factory(run, fold)
            cfg = TrainConfig(**{**config.to_dict(), "seed": config.seed + 1000 * run + fold})
            train_model(model, train, val, cfg)
            report = evaluate(model, train, test)
            cycles.append(report.to_dict() if hasattr(report, "to_dict") else dict(report))
    return summarize(cycles), cycles


def summarize(cycles):
    keys = cycles[0].keys()
    return {k: {"mean": float(np.mean([c[k] for c in cycles])),
                "std": float(np.std([c[k] for c in cycles]))} for k in keys}
