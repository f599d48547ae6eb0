"""Checkpoint files: a JSON manifest plus one flat little-endian f64 blob.

``save_checkpoint("run/checkpoint", arrays, meta)`` writes
``run/checkpoint.json`` and ``run/checkpoint.bin``.  The manifest lists each
array's name, shape and byte offset into the blob, in insertion order.
"""

from __future__ import annotations

import json
import os
from typing import Any, Mapping

import numpy as np

FORMAT = "segtran-checkpoint/1"


class CheckpointError(ValueError):
    pass


def _paths(prefix) -> tuple[str, str]:
    prefix = os.fspath(prefix)
    for ext in (".json", ".bin"):
        if prefix.endswith(ext):
            prefix = prefix[: -len(ext)]
    return prefix + ".json", prefix + ".bin"


def save_checkpoint(prefix, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    manifest_path, blob_path = _paths(prefix)
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    with open(blob_path, "wb") as fh:
        for c in chunks:
            fh.write(c)
    manifest = {"format": FORMAT, "dtype": "<f8", "nbytes": offset, "entries": entries, "meta": dict(meta or {})}
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=False)
        fh.write("\n")


def load_checkpoint(prefix) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    manifest_path, blob_path = _paths(prefix)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{manifest_path}: unknown checkpoint format {manifest.get('format')!r}")
    blob = np.fromfile(blob_path, dtype="<f8")
    if blob.nbytes != manifest["nbytes"]:
        raise CheckpointError(f"{blob_path}: expected {manifest['nbytes']} bytes, found {blob.nbytes}")
    arrays = {}
    for e in manifest["entries"]:
        start = e["offset"] // 8
        count = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = blob[start : start + count].reshape(e["shape"]).astype(np.float64)
    return arrays, manifest.get("meta", {})


def read_manifest(prefix) -> dict[str, Any]:
    manifest_path, _ = _paths(prefix)
    with open(manifest_path) as fh:
        return json.load(fh)
