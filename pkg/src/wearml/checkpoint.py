"""Checkpoint format: JSON manifest plus raw little-endian float32 blob.

The manifest lists entries in order, each with a name and shape; the
sibling .bin file is the concatenation of each entry's float32 bytes in
that order. Round-trips are bit exact for float32 state.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

FORMAT_NAME = "wearml-checkpoint"
FORMAT_VERSION = 1


def _bin_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(path, entries, extra: dict | None = None) -> None:
    """Write state to ``path`` (a .json manifest) and its sibling .bin.

    entries: iterable of (name, array) in the order they should be stored.
    extra: optional JSON-serializable metadata stored under "extra".
    """
    path = Path(path)
    manifest_entries = []
    blobs = []
    seen = set()
    for name, arr in entries:
        if name in seen:
            raise ValueError(f"duplicate checkpoint entry {name!r}")
        seen.add(name)
        a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
        manifest_entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "entries": manifest_entries,
    }
    if extra is not None:
        manifest["extra"] = extra
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=False)
        f.write("\n")
    with open(_bin_path(path), "wb") as f:
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    """Read a manifest + blob pair; returns (OrderedDict name->array, extra)."""
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a recognized checkpoint manifest")
    raw = _bin_path(path).read_bytes()
    out = OrderedDict()
    offset = 0
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: blob truncated at entry {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: blob has {len(raw) - offset} trailing bytes")
    return out, manifest.get("extra")
