"""On-disk formats: dataset archives and model checkpoints.

Dataset archive (a directory)::

    manifest.json      format version, n, T, count, feature channels, params, seeds
    graph.json         the graph the samples were simulated on
    trajectories.bin   uint8 indicators, layout [sample][node][t]
    observations.bin   little-endian float64, layout [sample][node][feature]

Checkpoint (one file)::

    b"DDMXCKPT" | uint64 LE header length | JSON header | float64 LE payload

The header lists parameter names and shapes in payload order.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .baselines import BASELINE_KINDS, CNNTime, make_baseline
from .epidemic import EpidemicParams
from .errors import CheckpointError, CorruptionError, ParameterError, VersionError
from .graphs import load_graph_json, save_graph_json
from .model import DDmixConfig, DDmixModel
from .observation import Dataset, Observation, trajectory_from_y

FORMAT_VERSION = 1
MAGIC = b"DDMXCKPT"
MODEL_KINDS = ("ddmix",) + BASELINE_KINDS


def _check_version(v, what):
    if v != FORMAT_VERSION:
        raise VersionError(f"{what} has format version {v!r}; this build reads {FORMAT_VERSION}")


def save_dataset(data, directory):
    os.makedirs(directory, exist_ok=True)
    n, T, F = data.graph.n, data.T, data.n_features
    manifest = {
        "version": FORMAT_VERSION,
        "graph": "graph.json",
        "n": n,
        "T": T,
        "count": len(data),
        "n_features": F,
        "params": data.params.to_dict() if data.params is not None else None,
        "seed": data.seed,
        "aux_fraction": data.aux_fraction,
        "sources": [int(tr.source) for _, tr in data],
        "model_kind": data.samples[0][1].model_kind if len(data) else None,
    }
    traj = np.zeros((len(data), n, T), dtype=np.uint8)
    obs = np.zeros((len(data), n, F), dtype="<f8")
    for s, (o, tr) in enumerate(data):
        traj[s] = tr.y
        obs[s] = o.features()
    save_graph_json(data.graph, os.path.join(directory, "graph.json"))
    with open(os.path.join(directory, "trajectories.bin"), "wb") as fh:
        fh.write(traj.tobytes())
    with open(os.path.join(directory, "observations.bin"), "wb") as fh:
        fh.write(obs.tobytes())
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _read_exact(path, expected):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) != expected:
        raise CorruptionError(f"{os.path.basename(path)}: expected {expected} bytes, found {len(raw)}")
    return raw


def load_dataset(directory):
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            m = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"unreadable manifest: {exc.msg}") from None
    _check_version(m.get("version"), "dataset archive")
    g = load_graph_json(os.path.join(directory, m.get("graph", "graph.json")))
    count, n, T, F = int(m["count"]), int(m["n"]), int(m["T"]), int(m["n_features"])
    if g.n != n:
        raise CorruptionError(f"manifest says n={n}, graph has {g.n} nodes")
    traj = np.frombuffer(_read_exact(os.path.join(directory, "trajectories.bin"), count * n * T),
                         dtype=np.uint8).reshape(count, n, T)
    obs = np.frombuffer(_read_exact(os.path.join(directory, "observations.bin"), count * n * F * 8),
                        dtype="<f8").reshape(count, n, F)
    if traj.size and traj.max() > 1:
        raise CorruptionError("trajectory payload holds values other than 0 and 1")
    sources = m.get("sources") or [None] * count
    if len(sources) != count:
        raise CorruptionError(f"{len(sources)} sources listed for {count} samples")
    kind = m.get("model_kind") or "SIRS"
    samples = []
    for s in range(count):
        feats = obs[s].astype(np.float64)
        o = Observation(feats[:, 0].copy(), feats[:, 1].copy() if F == 2 else None)
        samples.append((o, trajectory_from_y(traj[s].copy(), sources[s], kind)))
    params = EpidemicParams.from_dict(m["params"]) if m.get("params") else None
    return Dataset(g, samples, T, params, m.get("seed"), m.get("aux_fraction"))


def build_model(kind, config):
    """Instantiate a model of ``kind`` from its config dict."""
    if kind == "ddmix":
        return DDmixModel(DDmixConfig.from_dict(config))
    if kind in BASELINE_KINDS:
        cfg = dict(config)
        if kind == "cnn-time":
            return CNNTime(cfg["T"], cfg.get("n_features", 1), cfg.get("channels", 16), cfg.get("seed", 0))
        return make_baseline(kind, cfg.get("n"), cfg["T"], cfg.get("n_features", 1), cfg.get("seed", 0))
    raise ParameterError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def model_config(model):
    return model.config.to_dict() if hasattr(model.config, "to_dict") else dict(model.config)


def save_model(model, path):
    names, arrays = zip(*model.named_parameters()) if model.parameters() else ((), ())
    header = {
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model_config(model),
        "names": list(names),
        "shapes": [list(p.value.shape) for p in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in arrays:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def read_checkpoint_header(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size))
        return header, fh.read()


def load_model(path, expect_kind=None):
    header, payload = read_checkpoint_header(path)
    _check_version(header.get("version"), "checkpoint")
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"checkpoint holds a {kind} model, not {expect_kind}")
    model = build_model(kind, header["config"])
    expected = dict(model.named_parameters())
    if list(expected) != header["names"]:
        raise CheckpointError("parameter names in checkpoint do not match the architecture")
    sizes = [int(np.prod(s)) for s in header["shapes"]]
    if len(payload) != 8 * sum(sizes):
        raise CorruptionError(f"checkpoint payload: expected {8 * sum(sizes)} bytes, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for name, shape, size in zip(header["names"], header["shapes"], sizes):
        p = expected[name]
        if list(p.value.shape) != list(shape):
            raise CheckpointError(f"{name}: checkpoint shape {shape}, model shape {list(p.value.shape)}")
        p.value = flat[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    return model
