"""Checkpoint directories.

Layout::

    manifest.json   ordered list of {"name", "shape", "dtype": "f32"}
    params.bin      little-endian float32 values, concatenated in manifest order
    optimizer.bin   AdaGrad accumulators, same order and encoding
    model.json      architecture arguments needed to rebuild the network
"""
import json
from pathlib import Path

import numpy as np

from qfuse.tensor import ContractError

_LE_F32 = np.dtype("<f4")


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def save(model, directory, arch=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    _dump(d / "manifest.json", [{"name": p.name, "shape": list(p.shape), "dtype": "f32"} for p in params])
    with open(d / "params.bin", "wb") as fh:
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype=_LE_F32).tobytes())
    with open(d / "optimizer.bin", "wb") as fh:
        for p in params:
            fh.write(np.ascontiguousarray(p.accumulator, dtype=_LE_F32).tobytes())
    if arch is not None:
        _dump(d / "model.json", arch)


def read_arch(directory):
    return json.loads((Path(directory) / "model.json").read_text())


def load_into(model, directory):
    """Fill ``model``'s parameters (and accumulators) from a checkpoint directory."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    params = model.parameters()
    if [(m["name"], tuple(m["shape"])) for m in manifest] != [(p.name, p.shape) for p in params]:
        raise ContractError(f"checkpoint {d} does not match the model layout")
    values = np.fromfile(d / "params.bin", dtype=_LE_F32)
    opt_path = d / "optimizer.bin"
    accs = np.fromfile(opt_path, dtype=_LE_F32) if opt_path.exists() else None
    total = sum(p.size for p in params)
    if values.size != total or (accs is not None and accs.size != total):
        raise ContractError(f"checkpoint {d} has {values.size} values, model needs {total}")
    offset = 0
    for p in params:
        chunk = slice(offset, offset + p.size)
        p.data = values[chunk].reshape(p.shape).astype(p.dtype)
        if accs is not None:
            p.accumulator = accs[chunk].reshape(p.shape).astype(p.dtype)
        offset += p.size
    return model
