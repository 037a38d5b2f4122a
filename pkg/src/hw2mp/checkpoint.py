"""Portable checkpoint container.

A checkpoint is a directory holding one raw little-endian binary file per
array and an ``index.json`` that lists every array with its shape and dtype,
plus the training step, the config hash and the format version.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
INDEX_NAME = "index.json"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by a newer or unknown format version."""


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    step: int = 0
    config_hash: str = ""
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.step, self.config_hash, self.meta, self.format_version) != \
                (other.step, other.config_hash, other.meta, other.format_version):
            return False
        if self.arrays.keys() != other.arrays.keys():
            return False
        return all(a.dtype == other.arrays[k].dtype and a.shape == other.arrays[k].shape
                   and a.tobytes() == other.arrays[k].tobytes() for k, a in self.arrays.items())


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    entries = []
    for i, (name, arr) in enumerate(ckpt.arrays.items()):
        arr = np.asarray(arr)
        key = str(arr.dtype)
        if key not in _DTYPES:
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        fname = f"{i:04d}.bin"
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[key]).tobytes())
        entries.append({"name": name, "file": fname, "shape": list(arr.shape), "dtype": key})
    index = {"format_version": ckpt.format_version, "step": int(ckpt.step),
             "config_hash": ckpt.config_hash, "meta": ckpt.meta, "arrays": entries}
    with open(os.path.join(path, INDEX_NAME), "w") as fh:
        json.dump(index, fh, indent=1)


def load_checkpoint(path: str) -> Checkpoint:
    index_path = os.path.join(path, INDEX_NAME)
    if not os.path.exists(index_path):
        raise CheckpointError(f"no checkpoint index at {index_path}")
    try:
        with open(index_path) as fh:
            index = json.load(fh)
        version = index["format_version"]
        entries = index["arrays"]
        step, config_hash, meta = int(index["step"]), str(index["config_hash"]), dict(index["meta"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint index {index_path}: {exc}") from exc
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} is not supported (this build reads <= {FORMAT_VERSION})")

    arrays = {}
    for entry in entries:
        try:
            name, fname, shape, dtype = entry["name"], entry["file"], tuple(entry["shape"]), entry["dtype"]
            code = _DTYPES[dtype]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"corrupted index entry {entry!r}") from exc
        if name in arrays:
            raise CheckpointError(f"array {name!r} listed twice")
        with open(os.path.join(path, fname), "rb") as fh:
            raw = fh.read()
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(code).itemsize
        if len(raw) != expected:
            raise CheckpointError(f"{fname}: expected {expected} bytes for {name!r}, found {len(raw)}")
        arrays[name] = np.frombuffer(raw, dtype=code).astype(dtype).reshape(shape)
    return Checkpoint(arrays, step, config_hash, meta, version)


def module_checkpoint(module, step: int = 0, config_hash: str = "", meta: dict | None = None) -> Checkpoint:
    """Snapshot every parameter and buffer of a torch module."""
    arrays = {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}
    return Checkpoint(arrays, step, config_hash, dict(meta or {}))


def load_module_state(module, ckpt: Checkpoint) -> None:
    import torch

    state = module.state_dict()
    missing = set(state) ^ set(ckpt.arrays)
    if missing:
        raise CheckpointError(f"checkpoint and module disagree on entries: {sorted(missing)}")
    module.load_state_dict({k: torch.from_numpy(np.array(v)).to(state[k].dtype) for k, v in ckpt.arrays.items()})
