"""Binary checkpoint format.

Layout::

    LIFT3D-CKPT
    version 1
    meta <json>
    entries <n>
    <name> <f32|f64> <byte offset> <shape, comma separated or "scalar"> <trainable 0|1>
    ...
    end
    <payload: little-endian raw values, entries concatenated>

Offsets are relative to the first payload byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .nn import ParameterStore

MAGIC = "LIFT3D-CKPT"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAGS = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(store: ParameterStore, path, meta: dict | None = None):
    lines = [MAGIC, f"version {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True)]
    entries = list(store.items())
    lines.append(f"entries {len(entries)}")
    chunks = []
    offset = 0
    for name, p in entries:
        arr = p.tensor.data
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        shape = ",".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {tag} {offset} {shape} {int(p.trainable)}")
        chunks.append(raw)
        offset += len(raw)
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def next_line():
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated header")
        line = blob[pos:end].decode("utf-8")
        pos = end + 1
        return line

    if next_line() != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    ver = next_line()
    if ver != f"version {VERSION}":
        raise CheckpointError(f"{path}: unsupported version line {ver!r}")
    meta_line = next_line()
    if not meta_line.startswith("meta "):
        raise CheckpointError(f"{path}: missing meta line")
    meta = json.loads(meta_line[5:])
    count_line = next_line().split()
    if len(count_line) != 2 or count_line[0] != "entries":
        raise CheckpointError(f"{path}: malformed entry count")
    table = []
    for _ in range(int(count_line[1])):
        parts = next_line().split()
        if len(parts) != 5 or parts[1] not in _DTYPES:
            raise CheckpointError(f"{path}: malformed entry line {' '.join(parts)!r}")
        name, tag, off, shape, trainable = parts
        shape = () if shape == "scalar" else tuple(int(s) for s in shape.split(","))
        table.append((name, tag, int(off), shape, trainable == "1"))
    if next_line() != "end":
        raise CheckpointError(f"{path}: header not terminated")
    payload = memoryview(blob)[pos:]
    store = ParameterStore()
    for name, tag, off, shape, trainable in table:
        dt = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if off + nbytes > len(payload):
            raise CheckpointError(
                f"{path}: payload truncated in entry {name!r} "
                f"(needs bytes {off}..{off + nbytes}, file has {len(payload)})"
            )
        arr = np.frombuffer(payload[off:off + nbytes], dtype=dt).reshape(shape)
        if name in store:
            raise CheckpointError(f"{path}: duplicate entry {name!r}")
        store.add(name, arr.astype(dt.newbyteorder("="), copy=True), trainable, dtype=arr.dtype.newbyteorder("="))
    return store, meta
