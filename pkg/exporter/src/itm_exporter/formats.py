"""Writers for the artifact formats the detection pipeline consumes.

Implemented against the published format contracts (not by importing the
consumer) so this package stands alone:

- Embedding files: header ``<4sHHIQ`` = magic ``ITEM``, version 1,
  reserved 0, dim (u32), count (u64); then count*dim float32 little-endian.
- Manifests: JSONL, one sample per line with id, image, label and optional
  caption, objects, embedding_refs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

ITEM_MAGIC = b"ITEM"
ITEM_VERSION = 1
_ITEM_HEADER = struct.Struct("<4sHHIQ")


def write_item_file(path, rows: np.ndarray) -> Path:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError(f"rows must be 2-D (count, dim), got shape {rows.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_ITEM_HEADER.pack(ITEM_MAGIC, ITEM_VERSION, 0, rows.shape[1], rows.shape[0]))
        fh.write(rows.tobytes())
    return path


def manifest_line(
    sample_id: str,
    image: str,
    label: int,
    caption: str,
    objects: list[dict],
    embedding_refs: dict,
) -> str:
    record = {
        "id": sample_id,
        "image": image,
        "label": label,
        "caption": caption,
        "objects": objects,
        "embedding_refs": embedding_refs,
    }
    return json.dumps(record)


def append_manifest_lines(path, lines: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def existing_manifest_ids(path) -> set[str]:
    """Ids already present in a manifest; tolerant of a missing file."""
    path = Path(path)
    if not path.exists():
        return set()
    ids = set()
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                ids.add(json.loads(line)["id"])
    return ids
