"""Provider contracts: captioning, joint-space embedding, grounded detection.

Every provider exposes the same four operations so the pipeline never cares
which backend is configured; swapping caption models or encoders is a pure
configuration change.  Providers must be safe for concurrent calls.
"""

from __future__ import annotations

import abc
import enum
from dataclasses import dataclass, field
from pathlib import Path

from ..detection import ObjectDetection, check_box
from ..errors import ImageDecodeError
from ..representation import Embedding

DEFAULT_EMBEDDING_DIM = 768
# Detections below this confidence are dropped, and at most this many
# objects (highest confidence first) are kept per image.
DEFAULT_MIN_CONFIDENCE = 0.3
DEFAULT_MAX_OBJECTS = 8


class ImageSource(enum.Enum):
    FILE_PATH = "file_path"
    INLINE_BYTES = "inline_bytes"


@dataclass(frozen=True)
class ImageRef:
    """An image (on disk or inline) with an optional normalized crop box."""

    source: ImageSource
    payload: Path | bytes
    region: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.region is not None:
            object.__setattr__(self, "region", check_box(self.region, "region"))

    @classmethod
    def from_path(cls, path, region=None) -> ImageRef:
        return cls(ImageSource.FILE_PATH, Path(path), region)

    @classmethod
    def from_bytes(cls, data: bytes, region=None) -> ImageRef:
        return cls(ImageSource.INLINE_BYTES, bytes(data), region)

    def read_bytes(self) -> bytes:
        if self.source is ImageSource.INLINE_BYTES:
            return self.payload
        try:
            return Path(self.payload).read_bytes()
        except OSError as exc:
            raise ImageDecodeError(f"cannot read image {self.payload}: {exc}") from exc


class ProviderKind(enum.Enum):
    SYNTHETIC = "synthetic"
    FILE = "file"
    REMOTE = "remote"


@dataclass(frozen=True)
class SyntheticParams:
    """Angle structure of the synthetic corpus, in degrees.

    real/fake_align_deg set the image-to-caption angle for each class;
    noise_deg is the per-sample Gaussian jitter.  The global_*/local_*
    overrides let the two hierarchy levels carry different (or no) class
    signal, which is how distance-mode ablations are exercised without any
    pretrained model.
    """

    real_align_deg: float = 20.0
    fake_align_deg: float = 60.0
    noise_deg: float = 5.0
    objects_per_image: int = 3
    seed: int = 0
    global_real_align_deg: float | None = None
    global_fake_align_deg: float | None = None
    local_real_align_deg: float | None = None
    local_fake_align_deg: float | None = None

    def global_align(self, fake: bool) -> float:
        if fake:
            v = self.global_fake_align_deg
            return self.fake_align_deg if v is None else v
        v = self.global_real_align_deg
        return self.real_align_deg if v is None else v

    def local_align(self, fake: bool) -> float:
        if fake:
            v = self.local_fake_align_deg
            return self.fake_align_deg if v is None else v
        v = self.local_real_align_deg
        return self.real_align_deg if v is None else v


@dataclass(frozen=True)
class ProviderConfig:
    kind: ProviderKind = ProviderKind.SYNTHETIC
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    endpoint: str | None = None
    artifact_root: Path | None = None
    synthetic_params: SyntheticParams = field(default_factory=SyntheticParams)
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    max_objects: int = DEFAULT_MAX_OBJECTS
    timeout_s: float = 30.0
    max_in_flight: int = 8

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")


class Provider(abc.ABC):
    """One backend supplying captions, embeddings, and detections."""

    def __init__(self, config: ProviderConfig):
        self.config = config

    @abc.abstractmethod
    def caption(self, image: ImageRef) -> str:
        """Nonempty one-sentence caption for the image."""

    @abc.abstractmethod
    def embed_image(self, image: ImageRef) -> Embedding:
        """Joint-space embedding of the image (or of image.region's crop)."""

    @abc.abstractmethod
    def embed_text(self, text: str) -> Embedding:
        """Joint-space embedding of the text; rejects empty input."""

    @abc.abstractmethod
    def detect_objects(self, image: ImageRef, caption: str) -> list[ObjectDetection]:
        """Ground caption phrases to image regions."""


def filter_indices(
    detections: list[ObjectDetection],
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    max_objects: int = DEFAULT_MAX_OBJECTS,
) -> list[int]:
    """Indices of detections that survive the confidence floor and count
    cap, keeping the highest-confidence ones in their original relative
    order.  Exposed as indices so callers can keep parallel per-object
    data (e.g. precomputed embedding rows) aligned."""
    kept = [i for i, d in enumerate(detections) if d.confidence >= min_confidence]
    if len(kept) > max_objects:
        by_conf = sorted(kept, key=lambda i: (-detections[i].confidence, i))[:max_objects]
        kept = sorted(by_conf)
    return kept


def filter_detections(
    detections: list[ObjectDetection],
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    max_objects: int = DEFAULT_MAX_OBJECTS,
) -> list[ObjectDetection]:
    """Drop low-confidence detections and cap the count, keeping the
    highest-confidence ones in their original relative order."""
    return [detections[i] for i in filter_indices(detections, min_confidence, max_objects)]
