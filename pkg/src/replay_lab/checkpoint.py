"""Versioned binary model checkpoints.

Layout (all integers little-endian u32):

    magic b"BIRL" | version | meta_len | meta (canonical JSON, utf-8)
    then, repeated until end of file:
        name_len | name (utf-8) | ndim | dim_0 .. dim_{ndim-1} | raw f64 LE

The meta block stores the network config, the gate seed, the prior's
trainable flag, and the seen-class list; gates are rebuilt from their seed
on load. Round-trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import FormatError
from .model import (GaussianMixturePrior, NetworkConfig, ReplayModel,
                    make_context_gates)

MAGIC = b"BIRL"
VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_meta(model: ReplayModel) -> dict:
    return {
        "config": dataclasses.asdict(model.config),
        "gate_seed": int(model.gates.seed),
        "prior_trainable": bool(model.prior.trainable),
        "seen_classes": [int(c) for c in model.prior.seen_classes],
    }


def save_checkpoint(model: ReplayModel, path) -> None:
    meta = _canonical_json(checkpoint_meta(model))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        for name, tensor in model.all_params().items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.at = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.at + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated at byte {self.at}: needed {n} more "
                f"bytes for {what}, file has {len(self.blob) - self.at}")
        out = self.blob[self.at:self.at + n]
        self.at += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    @property
    def exhausted(self) -> bool:
        return self.at >= len(self.blob)


def _read_groups(r: _Reader) -> dict[str, np.ndarray]:
    groups: dict[str, np.ndarray] = {}
    while not r.exhausted:
        name_len = r.u32("group name length")
        name = r.take(name_len, "group name").decode("utf-8")
        ndim = r.u32(f"ndim of {name!r}")
        dims = tuple(r.u32(f"dim {i} of {name!r}") for i in range(ndim))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = r.take(8 * count, f"data of {name!r}")
        if name in groups:
            raise FormatError(f"{r.path}: duplicate parameter group {name!r}")
        groups[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    return groups


def _parse(path) -> tuple[int, dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    r = _Reader(blob, str(path))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    meta_len = r.u32("meta length")
    meta_raw = r.take(meta_len, "meta JSON")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: invalid meta JSON at byte 12: {e}") from e
    return version, meta, _read_groups(r)


def load_checkpoint(path) -> ReplayModel:
    _, meta, groups = _parse(path)
    try:
        config = NetworkConfig(**meta["config"])
        gate_seed = meta["gate_seed"]
        seen = [int(c) for c in meta["seen_classes"]]
        trainable = bool(meta["prior_trainable"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: meta is missing or mistypes a field: {e}") from e

    try:
        prior = GaussianMixturePrior(
            Tensor(groups.pop("prior.means"), requires_grad=trainable),
            Tensor(groups.pop("prior.logvars"), requires_grad=trainable),
            trainable=trainable, seen_classes=seen)
    except KeyError as e:
        raise FormatError(f"{path}: missing parameter group {e}") from e

    params = {name: Tensor(arr, requires_grad=not name.startswith("perceptual."))
              for name, arr in groups.items()}
    gates = make_context_gates(config.num_tasks, config.gated_layer_widths,
                               config.gate_fraction, gate_seed)
    model = ReplayModel(config, params, prior, gates)

    expected = set(_expected_group_names(config))
    got = set(params) | {"prior.means", "prior.logvars"}
    missing = expected - got
    extra = got - expected
    if missing:
        raise FormatError(f"{path}: missing parameter groups {sorted(missing)}")
    if extra:
        raise FormatError(f"{path}: unexpected parameter groups {sorted(extra)}")
    return model


def _expected_group_names(config: NetworkConfig) -> list[str]:
    names = []
    for i in range(len(config.perceptual_dims)):
        names += [f"perceptual.{i}.weight", f"perceptual.{i}.bias"]
    for j in range(len(config.fc_dims)):
        names += [f"fc.{j}.weight", f"fc.{j}.bias"]
    for head in ("latent_mu", "latent_logvar", "classifier"):
        names += [f"{head}.weight", f"{head}.bias"]
    n_dec = len(config.gated_layer_widths) + len(config.perceptual_dims) + 1
    for k in range(n_dec):
        names += [f"decoder.{k}.weight", f"decoder.{k}.bias"]
    return names + ["prior.means", "prior.logvars"]


def inspect_checkpoint(path) -> dict:
    """Meta echo plus the name and shape of every parameter group."""
    version, meta, groups = _parse(path)
    return {
        "version": version,
        "meta": meta,
        "groups": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in groups.items()],
    }
