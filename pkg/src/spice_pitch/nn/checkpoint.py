"""Checkpoint container.

A checkpoint is an ``.npz`` archive. The entry ``__header__`` holds a JSON
document with the format version, network description, step count and any
caller metadata; every other entry is a named array:

* ``param/<name>``   parameter values
* ``adam_m/<name>``, ``adam_v/<name>``  Adam moments
* ``buffer/<name>``  running statistics
"""

import io
import json

import numpy as np

FORMAT = "spice-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, params, buffers, network_spec, step, meta=None):
    arrays = {}
    adam_steps = {}
    for name, p in params.items():
        arrays[f"param/{name}"] = p.data
        arrays[f"adam_m/{name}"] = p.m
        arrays[f"adam_v/{name}"] = p.v
        adam_steps[name] = int(p.step)
    for name, b in buffers.items():
        arrays[f"buffer/{name}"] = b
    header = {
        "format": FORMAT,
        "version": VERSION,
        "step": int(step),
        "network": network_spec,
        "shapes": {name: list(p.data.shape) for name, p in params.items()},
        "adam_steps": adam_steps,
        "meta": meta or {},
    }
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_header(path):
    with np.load(path) as z:
        if "__header__" not in z:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(bytes(z["__header__"]).decode())
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header


def load(path, params, buffers):
    """Restore ``params`` and ``buffers`` in place; returns the header."""
    header = read_header(path)
    with np.load(path) as z:
        for name, p in params.items():
            key = f"param/{name}"
            if key not in z:
                raise CheckpointError(f"{path}: missing parameter {name}")
            arr = z[key]
            if arr.shape != p.data.shape:
                raise CheckpointError(f"{path}: shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr
            p.m[...] = z[f"adam_m/{name}"]
            p.v[...] = z[f"adam_v/{name}"]
            p.step = header["adam_steps"].get(name, 0)
        for name, b in buffers.items():
            b[...] = z[f"buffer/{name}"]
    return header
