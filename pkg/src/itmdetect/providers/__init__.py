"""Caption, detection, and embedding backends behind one interface."""

from .base import (
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_MAX_OBJECTS,
    DEFAULT_MIN_CONFIDENCE,
    ImageRef,
    ImageSource,
    ObjectDetection,
    Provider,
    ProviderConfig,
    ProviderKind,
    SyntheticParams,
    filter_detections,
    filter_indices,
)
from .filebacked import FileProvider
from .remote import RemoteProvider
from .synthetic import SyntheticProvider, write_synthetic_corpus


def make_provider(config: ProviderConfig) -> Provider:
    if config.kind is ProviderKind.SYNTHETIC:
        return SyntheticProvider(config)
    if config.kind is ProviderKind.FILE:
        return FileProvider(config)
    if config.kind is ProviderKind.REMOTE:
        return RemoteProvider(config)
    raise ValueError(f"unknown provider kind: {config.kind!r}")


__all__ = [
    "DEFAULT_EMBEDDING_DIM",
    "DEFAULT_MAX_OBJECTS",
    "DEFAULT_MIN_CONFIDENCE",
    "FileProvider",
    "ImageRef",
    "ImageSource",
    "ObjectDetection",
    "Provider",
    "ProviderConfig",
    "ProviderKind",
    "RemoteProvider",
    "SyntheticParams",
    "SyntheticProvider",
    "filter_detections",
    "filter_indices",
    "make_provider",
    "write_synthetic_corpus",
]
