"""Batch export: images -> manifest + embedding artifacts.

Labels come from the top-level input subdirectory (``real/`` -> 0,
``fake/`` -> 1) or from an explicit default.  Re-running a job skips ids the
manifest already contains, appending only new work as a fresh embedding
shard, so interrupted exports resume cleanly.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import (
    DEFAULT_CAPTIONER,
    DEFAULT_DETECTOR,
    DEFAULT_ENCODER,
    Encoder,
    caption_prompted,
    load_captioner,
    load_detector,
    load_encoder,
)
from .errors import ExporterError, ExportError
from .formats import append_manifest_lines, existing_manifest_ids, manifest_line, write_item_file
from .preprocess import global_view, load_rgb, object_view

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

_LABEL_DIRS = {"real": 0, "fake": 1}


@dataclass(frozen=True)
class ExportJob:
    input_dir: Path
    manifest_out: Path
    embeddings_out: Path  # path prefix; shards become <prefix>-NNNNN.item
    captioner_id: str = DEFAULT_CAPTIONER
    detector_id: str = DEFAULT_DETECTOR
    encoder_id: str = DEFAULT_ENCODER
    device: str = "cpu"
    batch_size: int = 8
    default_label: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.default_label not in (None, 0, 1):
            raise ValueError("default_label must be 0, 1, or omitted")


@dataclass(frozen=True)
class ExportResult:
    manifest_path: Path
    exported: list[str]
    skipped: list[str]
    failures: list[tuple[str, str]] = field(default_factory=list)


def discover_images(input_dir, default_label: int | None = None) -> list[tuple[Path, str, int]]:
    """(path, id, label) for every image under input_dir, sorted by id."""
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise ExportError(f"input directory not found: {input_dir}")
    entries = []
    unlabeled = []
    for path in sorted(input_dir.rglob("*")):
        if not (path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES):
            continue
        rel = path.relative_to(input_dir)
        label = _LABEL_DIRS.get(rel.parts[0].lower()) if len(rel.parts) > 1 else None
        if label is None:
            label = default_label
        if label is None:
            unlabeled.append(str(rel))
            continue
        entries.append((path, rel.as_posix(), label))
    if unlabeled:
        raise ExportError(
            "cannot determine labels for "
            + ", ".join(unlabeled[:5])
            + ("..." if len(unlabeled) > 5 else "")
            + "; place images under real/ or fake/, or pass a default label"
        )
    if not entries:
        raise ExportError(f"no images found under {input_dir}")
    return entries


def _next_shard(embeddings_out: Path) -> Path:
    index = 0
    while True:
        candidate = embeddings_out.parent / f"{embeddings_out.name}-{index:05d}.item"
        if not candidate.exists():
            return candidate
        index += 1


def embed_image_file(encoder: Encoder, path, region=None) -> np.ndarray:
    """Embedding of one image file: the direct-call path used both by the
    export loop and as its oracle."""
    image = load_rgb(path)
    view = global_view(image) if region is None else object_view(image, region)
    return np.asarray(encoder.embed_image(view), dtype=np.float64)


def _check_dim(vec: np.ndarray, encoder: Encoder, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (encoder.dim,):
        raise ExporterError(f"{what} embedding has shape {vec.shape}, expected ({encoder.dim},)")
    return vec


def export_corpus(job: ExportJob, strict: bool = False, log=None) -> ExportResult:
    if log is None:
        log = sys.stderr
    captioner = load_captioner(job.captioner_id, job.device)
    detector = load_detector(job.detector_id, job.device)
    encoder = load_encoder(job.encoder_id, job.device)

    manifest_out = Path(job.manifest_out)
    done = existing_manifest_ids(manifest_out)
    entries = discover_images(job.input_dir, job.default_label)

    rows: list[np.ndarray] = []
    lines: list[str] = []
    exported: list[str] = []
    skipped: list[str] = []
    failures: list[tuple[str, str]] = []
    shard_path = _next_shard(Path(job.embeddings_out))
    shard_rel = os.path.relpath(shard_path, manifest_out.parent)

    def add_row(vec: np.ndarray) -> dict:
        rows.append(vec.astype(np.float32))
        return {"file": shard_rel, "row": len(rows) - 1}

    for path, sample_id, label in entries:
        if sample_id in done:
            skipped.append(sample_id)
            continue
        mark = len(rows)
        try:
            image = load_rgb(path)
            caption = caption_prompted(captioner, image)
            detections = detector.detect(image, caption)
            for det in detections:
                if det.phrase not in caption:
                    raise ExporterError(
                        f"detector phrase {det.phrase!r} is not a caption substring"
                    )
            global_ref = add_row(_check_dim(encoder.embed_image(global_view(image)), encoder, "image"))
            caption_ref = add_row(_check_dim(encoder.embed_text(caption), encoder, "text"))
            object_refs = [
                add_row(_check_dim(encoder.embed_image(object_view(image, det.box)), encoder, "object"))
                for det in detections
            ]
            phrase_refs = [
                add_row(_check_dim(encoder.embed_text(det.phrase), encoder, "phrase"))
                for det in detections
            ]
        except ExporterError as exc:
            del rows[mark:]  # drop any partial rows for this sample
            if strict:
                raise ExportError(f"sample {sample_id}: {exc}") from exc
            failures.append((sample_id, str(exc)))
            print(f"skipped {sample_id}: {exc}", file=log)
            continue
        lines.append(
            manifest_line(
                sample_id=sample_id,
                image=os.path.relpath(path, manifest_out.parent),
                label=label,
                caption=caption,
                objects=[
                    {"phrase": d.phrase, "box": list(d.box), "confidence": d.confidence}
                    for d in detections
                ],
                embedding_refs={
                    "global_image": global_ref,
                    "caption_text": caption_ref,
                    "object_images": object_refs,
                    "object_phrases": phrase_refs,
                },
            )
        )
        exported.append(sample_id)

    if rows:
        write_item_file(shard_path, np.stack(rows))
    if lines:
        append_manifest_lines(manifest_out, lines)
    elif not manifest_out.exists() and not skipped:
        raise ExportError("nothing exported: every sample failed")
    return ExportResult(
        manifest_path=manifest_out, exported=exported, skipped=skipped, failures=failures
    )
