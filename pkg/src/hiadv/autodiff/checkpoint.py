"""Parameter checkpoints: a JSON manifest plus a flat little-endian float64 blob.

Manifest layout::

    {"dtype": "<f8", "params": {name: {"shape": [...], "offset": bytes, "group": g}}}
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MANIFEST = "params.json"
BLOB = "params.bin"


def save_params(directory: str | Path, groups: Mapping[str, Mapping[str, Tensor]]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    chunks = []
    offset = 0
    for group, params in groups.items():
        for name, t in params.items():
            if name in entries:
                raise ValueError(f"duplicate parameter name {name!r}")
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            entries[name] = {"shape": list(arr.shape), "offset": offset, "group": group}
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    (directory / BLOB).write_bytes(b"".join(chunks))
    manifest = {"dtype": "<f8", "params": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                      encoding="utf-8")


def load_arrays(directory: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Return ``(arrays by name, group by name)``."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    blob = (directory / BLOB).read_bytes()
    arrays, groups = {}, {}
    for name, meta in manifest["params"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=meta["offset"])
        arrays[name] = arr.reshape(shape).astype(np.float64)
        groups[name] = meta["group"]
    return arrays, groups


def restore_params(directory: str | Path, params: Mapping[str, Tensor], strict: bool = True) -> None:
    arrays, _ = load_arrays(directory)
    missing = sorted(set(params) - set(arrays))
    if strict and missing:
        raise KeyError(f"checkpoint lacks parameters: {missing}")
    for name, t in params.items():
        if name not in arrays:
            continue
        arr = arrays[name]
        if arr.shape != t.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.data[...] = arr
