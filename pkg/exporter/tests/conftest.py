"""Shared fixtures for the exporter test suite.

The corpus fixture lays out a small labeled image tree::

    corpus/
        real/img_00.png ... img_05.png
        fake/img_00.png ... img_05.png

Images are seeded random PNGs, so every derived artifact (captions, boxes,
embeddings from the hash backends) is reproducible across runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from itm_exporter import ExportJob

ENCODER_DIM = 32
HASH_BACKENDS = {
    "captioner_id": "hash-captioner",
    "detector_id": "hash-detector",
    "encoder_id": f"hash-encoder-{ENCODER_DIM}",
}

PER_LABEL = 6


def write_png(path: Path, seed: int, size: tuple[int, int] = (48, 64)) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    arr = (rng.random((*size, 3)) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def build_corpus(root: Path, per_label: int = PER_LABEL) -> Path:
    corpus = root / "corpus"
    seed = 0
    for label in ("real", "fake"):
        for i in range(per_label):
            write_png(corpus / label / f"img_{i:02d}.png", seed)
            seed += 1
    return corpus


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    """A fresh 12-image labeled corpus (6 real + 6 fake)."""
    return build_corpus(tmp_path)


@pytest.fixture
def png_writer():
    """Expose the seeded PNG helper without cross-suite conftest imports."""
    return write_png


@pytest.fixture
def make_job(tmp_path: Path):
    """Factory for ExportJobs wired to the weight-free hash backends."""

    def _make(corpus_dir: Path, out_name: str = "out", **overrides) -> ExportJob:
        out = tmp_path / out_name
        params = {**HASH_BACKENDS, **overrides}
        return ExportJob(
            input_dir=corpus_dir,
            manifest_out=out / "manifest.jsonl",
            embeddings_out=out / "embeddings" / "part",
            **params,
        )

    return _make
