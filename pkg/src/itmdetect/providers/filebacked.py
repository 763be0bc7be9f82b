"""File-backed provider: serves captions, detections, and embeddings that
were precomputed into a manifest plus embedding files.

It never fabricates a value — anything not present in the artifacts raises
MissingArtifact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..embedding_io import EmbeddingFileReader
from ..errors import MissingArtifact
from ..manifest import EmbeddingRef, SampleRecord, load_manifest
from ..representation import Embedding
from .base import ImageRef, ImageSource, ObjectDetection, Provider, ProviderConfig

_BOX_MATCH_TOL = 1e-9


class FileProvider(Provider):
    def __init__(self, config: ProviderConfig):
        super().__init__(config)
        if config.artifact_root is None:
            raise MissingArtifact("file provider needs artifact_root")
        root = Path(config.artifact_root)
        self.manifest_path = root / "manifest.jsonl" if root.is_dir() else root
        self.root = self.manifest_path.parent
        if not self.manifest_path.exists():
            raise MissingArtifact(f"no manifest at {self.manifest_path}")
        self.records = load_manifest(self.manifest_path)
        self._by_image: dict[str, SampleRecord] = {}
        self._text_refs: dict[str, EmbeddingRef] = {}
        for record in self.records:
            self._by_image[str((self.root / record.image).resolve())] = record
            refs = record.embedding_refs
            if refs is None:
                continue
            if record.caption is not None and refs.caption_text is not None:
                self._text_refs[record.caption] = refs.caption_text
            if record.objects is not None:
                for obj, ref in zip(record.objects, refs.object_phrases):
                    self._text_refs[obj.phrase] = ref
        self._readers: dict[str, EmbeddingFileReader] = {}

    def _record(self, image: ImageRef) -> SampleRecord:
        if image.source is not ImageSource.FILE_PATH:
            raise MissingArtifact("file provider can only serve images by path")
        key = str(Path(image.payload).resolve())
        record = self._by_image.get(key)
        if record is None:
            raise MissingArtifact(f"no artifacts for image {image.payload}")
        return record

    def _read(self, ref: EmbeddingRef) -> Embedding:
        reader = self._readers.get(ref.file)
        if reader is None:
            path = self.root / ref.file
            if not path.exists():
                raise MissingArtifact(f"embedding file not found: {path}")
            reader = EmbeddingFileReader(path)
            self._readers[ref.file] = reader
        if ref.row >= reader.count:
            raise MissingArtifact(f"row {ref.row} out of range for {ref.file} ({reader.count} rows)")
        return Embedding(reader.row(ref.row))

    def caption(self, image: ImageRef) -> str:
        record = self._record(image)
        if record.caption is None:
            raise MissingArtifact(f"no caption recorded for sample {record.id}")
        return record.caption

    def embed_image(self, image: ImageRef) -> Embedding:
        record = self._record(image)
        refs = record.embedding_refs
        if image.region is None:
            if refs is None or refs.global_image is None:
                raise MissingArtifact(f"no global image embedding for sample {record.id}")
            return self._read(refs.global_image)
        if record.objects is not None and refs is not None:
            for i, obj in enumerate(record.objects):
                if max(abs(a - b) for a, b in zip(obj.box, image.region)) < _BOX_MATCH_TOL:
                    if i < len(refs.object_images):
                        return self._read(refs.object_images[i])
                    break
        raise MissingArtifact(
            f"no object embedding for sample {record.id} at region {np.round(image.region, 6).tolist()}"
        )

    def embed_text(self, text: str) -> Embedding:
        ref = self._text_refs.get(text)
        if ref is None:
            raise MissingArtifact(f"no text embedding recorded for {text!r}")
        return self._read(ref)

    def detect_objects(self, image: ImageRef, caption: str) -> list[ObjectDetection]:
        record = self._record(image)
        if record.objects is None:
            raise MissingArtifact(f"no detections recorded for sample {record.id}")
        return list(record.objects)
