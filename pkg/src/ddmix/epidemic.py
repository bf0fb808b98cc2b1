"""Discrete-time SIR / SIRS / SIRSD epidemics on a graph.

All nodes update synchronously: the state at step t+1 is drawn from the
complete state at step t.  A susceptible node with m infectious neighbours is
infected with probability ``1 - (1 - p_infect)**m``.  An infectious node first
dies with ``p_death``; survivors recover with ``p_recover / (1 - p_death)`` so
that the marginal recovery probability per step is exactly ``p_recover``.
Recovered nodes lose immunity with ``p_wane``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

S, I, R, D = 0, 1, 2, 3
STATE_NAMES = "SIRD"
MODEL_KINDS = ("SIR", "SIRS", "SIRSD")


@dataclass
class EpidemicParams:
    p_infect: float
    p_recover: float
    p_wane: float = 0.0
    p_death: float = 0.0
    model_kind: str = "SIRS"

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ParameterError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.model_kind == "SIR":
            self.p_wane = 0.0
            self.p_death = 0.0
        elif self.model_kind == "SIRS":
            self.p_death = 0.0
        for name in ("p_infect", "p_recover", "p_wane", "p_death"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")
        if self.p_recover + self.p_death > 1.0 + 1e-12:
            raise ParameterError("p_recover + p_death must not exceed 1")

    @classmethod
    def defaults(cls, model_kind="SIRS"):
        """Rates used for the synthetic experiments: infection 0.5, recovery
        0.05, waning 0.005 and, for SIRSD, death 0.1."""
        return cls(0.5, 0.05, 0.005, 0.1, model_kind)

    def to_dict(self):
        return {"p_infect": self.p_infect, "p_recover": self.p_recover,
                "p_wane": self.p_wane, "p_death": self.p_death,
                "model_kind": self.model_kind}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["p_infect"]), float(d["p_recover"]), float(d.get("p_wane", 0.0)),
                   float(d.get("p_death", 0.0)), d.get("model_kind", "SIRS"))


@dataclass(eq=False)
class Trajectory:
    """One epidemic run.

    ``y[i, t] == 1`` iff node i is infectious at step t (column 0 is step 1).
    ``states`` holds the full compartment codes (S=0, I=1, R=2, D=3); it is
    ``None`` for trajectories restored from infection indicators alone.
    """

    y: np.ndarray
    states: np.ndarray | None
    source: int
    model_kind: str = "SIRS"

    @property
    def T(self):
        return self.y.shape[1]

    @property
    def n(self):
        return self.y.shape[0]


def simulate_epidemic(g, params, T, seed=None, source=None):
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    n = g.n
    rng = np.random.default_rng(seed)
    if source is None:
        source = int(rng.integers(n))
    elif not 0 <= source < n:
        raise ParameterError(f"source {source} outside 0..{n - 1}")

    adj = g.adjacency
    keep = 1.0 - params.p_infect
    p_rec = 0.0
    if params.p_recover > 0:
        p_rec = params.p_recover / (1.0 - params.p_death)

    states = np.zeros((n, T), dtype=np.int8)
    states[source, 0] = I
    cur = states[:, 0].copy()
    for t in range(1, T):
        u = rng.random((2, n))
        m = adj @ (cur == I)
        p_inf = 1.0 - keep ** m
        nxt = cur.copy()
        sus, inf, rec = cur == S, cur == I, cur == R
        nxt[sus & (u[0] < p_inf)] = I
        dies = inf & (u[0] < params.p_death)
        nxt[dies] = D
        nxt[inf & ~dies & (u[1] < p_rec)] = R
        nxt[rec & (u[0] < params.p_wane)] = S
        states[:, t] = nxt
        cur = nxt
    return Trajectory((states == I).astype(np.int8), states, int(source), params.model_kind)


_ALLOWED = {
    "SIR": {(S, S), (S, I), (I, I), (I, R), (R, R)},
    "SIRS": {(S, S), (S, I), (I, I), (I, R), (R, R), (R, S)},
    "SIRSD": {(S, S), (S, I), (I, I), (I, R), (I, D), (R, R), (R, S), (D, D)},
}


def validate_trajectory(tr, g):
    """True iff every transition is legal for ``tr.model_kind`` and every new
    infection has an infectious neighbour at the previous step."""
    y = np.asarray(tr.y)
    if y.ndim != 2 or y.shape[0] != g.n:
        raise ParameterError(f"trajectory has {y.shape[0] if y.ndim else 0} nodes, graph has {g.n}")
    if not np.isin(y, (0, 1)).all():
        return False
    if not 0 <= tr.source < g.n:
        return False
    first = np.zeros(g.n, dtype=y.dtype)
    first[tr.source] = 1
    if not np.array_equal(y[:, 0], first):
        return False

    adj = g.adjacency
    if tr.states is None:
        for t in range(1, y.shape[1]):
            new = (y[:, t] == 1) & (y[:, t - 1] == 0)
            if (adj[new] @ y[:, t - 1] == 0).any():
                return False
        return True

    states = np.asarray(tr.states)
    if states.shape != y.shape or not np.array_equal(y, (states == I).astype(y.dtype)):
        return False
    if states[tr.source, 0] != I or np.count_nonzero(states[:, 0] != S) != 1:
        return False
    allowed = _ALLOWED.get(tr.model_kind)
    if allowed is None:
        raise ParameterError(f"unknown model_kind {tr.model_kind!r}")
    codes = np.array([a * 4 + b for a, b in allowed])
    for t in range(1, states.shape[1]):
        prev, cur = states[:, t - 1], states[:, t]
        if not np.isin(prev.astype(int) * 4 + cur, codes).all():
            return False
        new = (prev == S) & (cur == I)
        if (adj[new] @ (prev == I) == 0).any():
            return False
    return True
