"""Corpus manifests: one JSON object per line describing a labeled sample.

A record always carries an id, an image path (relative to the manifest's
directory), and a 0/1 label.  Caption, grounded objects, and references
into embedding files are optional; when present they let the pipeline skip
the corresponding provider calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .detection import ObjectDetection
from .errors import DuplicateId, ParseError


@dataclass(frozen=True)
class EmbeddingRef:
    """A row of a specific embedding file."""

    file: str
    row: int

    def __post_init__(self):
        if not self.file:
            raise ValueError("embedding ref needs a file path")
        if self.row < 0:
            raise ValueError(f"embedding ref row must be >= 0: {self.row}")

    def to_dict(self) -> dict:
        return {"file": self.file, "row": self.row}


@dataclass(frozen=True)
class EmbeddingRefs:
    global_image: EmbeddingRef | None = None
    caption_text: EmbeddingRef | None = None
    object_images: list[EmbeddingRef] = field(default_factory=list)
    object_phrases: list[EmbeddingRef] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {}
        if self.global_image is not None:
            out["global_image"] = self.global_image.to_dict()
        if self.caption_text is not None:
            out["caption_text"] = self.caption_text.to_dict()
        if self.object_images:
            out["object_images"] = [r.to_dict() for r in self.object_images]
        if self.object_phrases:
            out["object_phrases"] = [r.to_dict() for r in self.object_phrases]
        return out


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image: str
    label: int
    caption: str | None = None
    objects: list[ObjectDetection] | None = None
    embedding_refs: EmbeddingRefs | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("sample id must be nonempty")
        if not self.image:
            raise ValueError("sample image path must be nonempty")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 (real) or 1 (fake): {self.label!r}")

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "image": self.image, "label": self.label}
        if self.caption is not None:
            out["caption"] = self.caption
        if self.objects is not None:
            out["objects"] = [
                {"phrase": o.phrase, "box": list(o.box), "confidence": o.confidence}
                for o in self.objects
            ]
        if self.embedding_refs is not None:
            out["embedding_refs"] = self.embedding_refs.to_dict()
        return out


def _parse_ref(obj, what: str) -> EmbeddingRef:
    if not isinstance(obj, dict):
        raise ValueError(f"{what} must be an object with file/row")
    return EmbeddingRef(file=str(obj["file"]), row=int(obj["row"]))


def _parse_record(obj: dict) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ValueError("manifest line must be a JSON object")
    objects = None
    if obj.get("objects") is not None:
        objects = [
            ObjectDetection(
                phrase=str(o["phrase"]),
                box=tuple(o["box"]),
                confidence=float(o["confidence"]),
            )
            for o in obj["objects"]
        ]
    refs = None
    if obj.get("embedding_refs") is not None:
        raw = obj["embedding_refs"]
        if not isinstance(raw, dict):
            raise ValueError("embedding_refs must be an object")
        refs = EmbeddingRefs(
            global_image=_parse_ref(raw["global_image"], "global_image") if "global_image" in raw else None,
            caption_text=_parse_ref(raw["caption_text"], "caption_text") if "caption_text" in raw else None,
            object_images=[_parse_ref(r, "object_images entry") for r in raw.get("object_images", [])],
            object_phrases=[_parse_ref(r, "object_phrases entry") for r in raw.get("object_phrases", [])],
        )
    label = obj["label"]
    if isinstance(label, bool) or not isinstance(label, int):
        raise ValueError(f"label must be the integer 0 or 1: {label!r}")
    caption = obj.get("caption")
    return SampleRecord(
        id=str(obj["id"]),
        image=str(obj["image"]),
        label=label,
        caption=None if caption is None else str(caption),
        objects=objects,
        embedding_refs=refs,
    )


def load_manifest(path) -> list[SampleRecord]:
    """Read a JSONL manifest, rejecting malformed lines and duplicate ids."""
    path = Path(path)
    records: list[SampleRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = _parse_record(obj)
            except ParseError:
                raise
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            except (KeyError, ValueError, TypeError) as exc:
                detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise ParseError(line_no, detail) from exc
            if record.id in seen:
                raise DuplicateId(f"duplicate sample id {record.id!r} at line {line_no}")
            seen.add(record.id)
            records.append(record)
    return records


def save_manifest(path, records: list[SampleRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict()) + "\n")


def image_path(manifest_path, record: SampleRecord) -> Path:
    """Resolve a record's image path against its manifest's directory."""
    return Path(manifest_path).parent / record.image
