"""Model inputs built from trajectories, and simulated datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .epidemic import Trajectory, simulate_epidemic
from .errors import ParameterError


@dataclass(eq=False)
class Observation:
    """Time-collapsed view of one epidemic.

    ``x[i]`` is the fraction of steps node i spent infectious; ``aux`` is the
    optional first-infection-day channel (0 where undisclosed).
    """

    x: np.ndarray
    aux: np.ndarray | None = None

    @property
    def n_features(self):
        return 1 if self.aux is None else 2

    @property
    def n(self):
        return self.x.shape[0]

    def features(self):
        """N x F feature matrix fed to the models."""
        if self.aux is None:
            return self.x[:, None].astype(np.float64)
        return np.column_stack([self.x, self.aux]).astype(np.float64)


def collapse_mean(tr):
    return Observation(np.asarray(tr.y, dtype=np.float64).mean(axis=1))


def first_infection_features(tr, fraction, seed=None):
    """Disclose the (normalized) first infection step of a random subset of
    ever-infected nodes, never the source."""
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    y = np.asarray(tr.y)
    aux = np.zeros(y.shape[0])
    ever = np.flatnonzero(y.any(axis=1))
    pool = ever[ever != tr.source]
    # pool excludes the source, so this is floor(fraction * (#ever-infected - 1))
    count = math.floor(fraction * pool.size + 1e-9)
    if count == 0:
        return aux
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=count, replace=False)
    first_step = y[chosen].argmax(axis=1) + 1
    aux[chosen] = first_step / y.shape[1]
    return aux


class Dataset:
    """Observation/trajectory pairs simulated on one graph."""

    def __init__(self, graph, samples, T, params=None, seed=None, aux_fraction=None):
        self.graph = graph
        self.samples = list(samples)
        self.T = T
        self.params = params
        self.seed = seed
        self.aux_fraction = aux_fraction

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return self.subset(range(len(self.samples))[key])
        return self.samples[key]

    def subset(self, indices):
        return Dataset(self.graph, [self.samples[i] for i in indices], self.T,
                       self.params, self.seed, self.aux_fraction)

    @property
    def n_features(self):
        return self.samples[0][0].n_features if self.samples else 1


def build_dataset(g, params, T, count, seed=None, with_aux=False, aux_fraction=0.3):
    """Simulate ``count`` independent epidemics with their observations.

    Per-sample seeds are spawned from ``seed`` so the dataset is reproducible
    and any prefix is independent of ``count``.
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    children = np.random.SeedSequence(seed).spawn(count)
    samples = []
    for child in children:
        sim_seed, aux_seed = child.spawn(2)
        tr = simulate_epidemic(g, params, T, seed=np.random.default_rng(sim_seed))
        obs = collapse_mean(tr)
        if with_aux:
            obs.aux = first_infection_features(tr, aux_fraction, np.random.default_rng(aux_seed))
        samples.append((obs, tr))
    return Dataset(g, samples, T, params, seed, aux_fraction if with_aux else None)


def trajectory_from_y(y, source=None, model_kind="SIRS"):
    y = np.asarray(y, dtype=np.int8)
    if source is None:
        src = np.flatnonzero(y[:, 0])
        source = int(src[0]) if src.size else 0
    return Trajectory(y, None, source, model_kind)
