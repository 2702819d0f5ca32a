"""Binary checkpoint format: magic, JSON manifest, little-endian float64 blob.

Layout: 8 magic bytes, a uint64 (little-endian) manifest length, the UTF-8
JSON manifest, then the concatenated tensor data. The manifest lists each
tensor's name, shape, and byte offset into the blob, plus free-form metadata
(config hash, seed, epoch). Tensors are stored in manifest order.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

__all__ = ["CheckpointError", "MAGIC", "load_checkpoint", "save_checkpoint"]

MAGIC = b"PSRANK01"


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or foreign checkpoint files."""


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float64 arrays plus JSON-serializable metadata."""
    path = os.fspath(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as ({name: array}, meta)."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise CheckpointError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes (not a checkpoint of this format)")
        size_raw = fh.read(8)
        if len(size_raw) != 8:
            raise CheckpointError(f"{path}: truncated header")
        (manifest_len,) = struct.unpack("<Q", size_raw)
        manifest_raw = fh.read(manifest_len)
        if len(manifest_raw) != manifest_len:
            raise CheckpointError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(manifest_raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
        blob = fh.read()
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise CheckpointError(f"{path}: manifest missing tensor table")
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 8 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated data for tensor {entry['name']!r}")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
    return tensors, manifest.get("meta", {})
