"""Offline glue around pretrained vision-language models.

Exports captions, grounded object detections, and joint-space embeddings to
manifest + embedding-file artifacts, and can serve the same models over the
/v1/* HTTP protocol.
"""

from .backends import (
    DEFAULT_CAPTION_PROMPT,
    DEFAULT_CAPTIONER,
    DEFAULT_DETECTOR,
    DEFAULT_ENCODER,
    Captioner,
    DetectedObject,
    Detector,
    Encoder,
    HashCaptioner,
    HashDetector,
    HashEncoder,
    StatsCaptioner,
    caption_prompted,
    first_sentence,
    load_captioner,
    load_detector,
    load_encoder,
)
from .errors import ExporterError, ExportError, ImageReadError, ModelLoadError
from .export import (
    ExportJob,
    ExportResult,
    discover_images,
    embed_image_file,
    export_corpus,
)
from .formats import write_item_file
from .preprocess import IMAGE_SIZE, global_view, load_rgb, object_view
from .server import ServeConfig, build_server, serve

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CAPTION_PROMPT",
    "DEFAULT_CAPTIONER",
    "DEFAULT_DETECTOR",
    "DEFAULT_ENCODER",
    "IMAGE_SIZE",
    "Captioner",
    "DetectedObject",
    "Detector",
    "Encoder",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "ExporterError",
    "HashCaptioner",
    "HashDetector",
    "HashEncoder",
    "ImageReadError",
    "ModelLoadError",
    "ServeConfig",
    "StatsCaptioner",
    "build_server",
    "caption_prompted",
    "discover_images",
    "embed_image_file",
    "export_corpus",
    "first_sentence",
    "global_view",
    "load_captioner",
    "load_detector",
    "load_encoder",
    "load_rgb",
    "object_view",
    "serve",
    "write_item_file",
]
