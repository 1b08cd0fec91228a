"""Versioned on-disk manifest for named float64 arrays.

Layout (little-endian, byte-deterministic for identical inputs):

    line 1: magic  b"TASKAWARE-PARAMS v1\\n"
    line 2: JSON   {"arrays": [{"name": ..., "shape": [...]}, ...],
                    "meta": {...}}            (arrays sorted by name)
    then:   the raw "<f8" C-order buffers, concatenated in header order.

Used for encoder parameter sets and full model checkpoints.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TASKAWARE-PARAMS v1\n"


class ManifestError(ValueError):
    """The file is not a readable parameter manifest of this version."""


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    buffers = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        buffers.append(arr.tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        for buf in buffers:
            fh.write(buf)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ManifestError(f"{path}: not a TASKAWARE-PARAMS v1 manifest")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ManifestError(f"{path}: corrupt manifest header: {exc}") from exc
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ManifestError(f"{path}: truncated buffer for array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, header.get("meta", {})
