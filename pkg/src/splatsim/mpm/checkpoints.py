"""Binary particle checkpoints and the run manifest.

Checkpoint layout (little-endian): uint64 step index, uint64 particle count,
then one packed record per particle: position float64 x3, velocity float64 x3,
source index uint32. The manifest JSON sits next to the checkpoints and echoes
the configuration plus the checkpoint list.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from splatsim.errors import CheckpointError

_HEADER = struct.Struct("<QQ")
_RECORD = np.dtype([("x", "<f8", (3,)), ("v", "<f8", (3,)), ("source", "<u4")])


def write_checkpoint(path, step, x, v, source):
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    source = np.asarray(source, dtype=np.uint32).reshape(-1)
    n = len(x)
    rec = np.empty(n, dtype=_RECORD)
    rec["x"] = x
    rec["v"] = v
    rec["source"] = source
    with open(path, "wb") as f:
        f.write(_HEADER.pack(int(step), n))
        f.write(rec.tobytes())


def read_checkpoint(path):
    """Returns (step, x (N,3), v (N,3), source (N,))."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        step, n = _HEADER.unpack(head)
        payload = f.read(n * _RECORD.itemsize)
    if len(payload) < n * _RECORD.itemsize:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} bytes "
                              f"for {n} particles)")
    rec = np.frombuffer(payload, dtype=_RECORD)
    return int(step), rec["x"].copy(), rec["v"].copy(), rec["source"].copy()


def write_manifest(path, entries, *, config=None, material=None, n_particles=None,
                   dt=None, extra=None):
    doc = {
        "format": "splatsim-checkpoints-v1",
        "n_particles": n_particles,
        "dt": dt,
        "config": config,
        "material": material,
        "checkpoints": entries,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def read_manifest(path):
    with open(path) as f:
        return json.load(f)


def checkpoint_files(manifest_path):
    """Checkpoint paths listed in a manifest, resolved next to it."""
    base = Path(manifest_path).parent
    doc = read_manifest(manifest_path)
    return [base / e["file"] for e in doc["checkpoints"]]
