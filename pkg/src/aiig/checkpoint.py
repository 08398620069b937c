"""Portable text checkpoint container.

Layout::

    # aiig-checkpoint v1
    arch.actor: dense 7,64,64,6 head=softmax
    seed: 3
    step: 1200
    ---
    [actor.W0] 7 64
    <row-major values, one matrix row per line>
    [actor.b0] 64
    ...

Values are written with 17 significant digits, which round-trips every
IEEE double exactly.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "# aiig-checkpoint v1"


class CheckpointError(ValueError):
    pass


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def save_container(path, header: Mapping[str, object], blocks: Mapping[str, np.ndarray]) -> None:
    lines = [MAGIC]
    for key, value in header.items():
        text = str(value)
        if "\n" in text or ":" in key:
            raise CheckpointError(f"header entry {key!r} cannot be encoded")
        lines.append(f"{key}: {text}")
    lines.append("---")
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"[{name}] " + " ".join(map(str, arr.shape)))
        if arr.ndim >= 2:
            for row in arr.reshape(arr.shape[0], -1):
                lines.append(_fmt(row))
        elif arr.size:
            lines.append(_fmt(arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_container(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != MAGIC:
        raise CheckpointError(f"{path}: not an aiig checkpoint")
    header: dict[str, str] = {}
    i = 1
    while i < len(text) and text[i] != "---":
        key, _, value = text[i].partition(": ")
        header[key] = value
        i += 1
    blocks: dict[str, np.ndarray] = {}
    i += 1
    while i < len(text):
        line = text[i]
        if not line.startswith("["):
            raise CheckpointError(f"{path}:{i + 1}: expected a block header")
        name, _, dims = line[1:].partition("] ")
        shape = tuple(int(d) for d in dims.split()) if dims.strip() else ()
        size = int(np.prod(shape)) if shape else 1
        n_rows = shape[0] if len(shape) >= 2 else (1 if size else 0)
        values = []
        for row in text[i + 1:i + 1 + n_rows]:
            values.extend(float(v) for v in row.split())
        if len(values) != size:
            raise CheckpointError(f"{path}: block {name} has {len(values)} values, expected {size}")
        blocks[name] = np.array(values, dtype=np.float64).reshape(shape)
        i += 1 + n_rows
    return header, blocks


def content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
