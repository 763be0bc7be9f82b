"""Model backends: captioners, grounded detectors, and joint encoders.

Real pretrained models are loaded lazily by id.  The hash-* family needs no
weights: outputs are derived deterministically from content hashes, which is
enough to exercise every artifact and protocol contract end to end.
"""

from __future__ import annotations

import abc
import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .errors import ExporterError, ModelLoadError
from .preprocess import check_box, to_uint8

DEFAULT_CAPTION_PROMPT = "Please generate a one-sentence caption for the input image."

DEFAULT_CAPTIONER = "blip2-opt-2.7b"
DEFAULT_DETECTOR = "glip-Swin-L"
DEFAULT_ENCODER = "clip-vit-large-patch14"


@dataclass(frozen=True)
class DetectedObject:
    phrase: str
    box: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("detected object needs a nonempty phrase")
        object.__setattr__(self, "box", check_box(self.box))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


class Captioner(abc.ABC):
    model_id: str

    @abc.abstractmethod
    def caption(self, image: np.ndarray, prompt: str = DEFAULT_CAPTION_PROMPT) -> str:
        """Describe an RGB [0,1] image under the given instruction."""


class Detector(abc.ABC):
    model_id: str

    @abc.abstractmethod
    def detect(self, image: np.ndarray, caption: str) -> list[DetectedObject]:
        """Ground caption phrases to normalized boxes."""


class Encoder(abc.ABC):
    model_id: str
    dim: int

    @abc.abstractmethod
    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Joint-space vector for a preprocessed RGB [0,1] image."""

    @abc.abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        """Joint-space vector for text; rejects empty input."""


def caption_prompted(captioner: Captioner, image: np.ndarray, prompt_template: str = DEFAULT_CAPTION_PROMPT) -> str:
    """One-sentence caption under an instruction template."""
    if not prompt_template or not prompt_template.strip():
        raise ValueError("prompt template must be nonempty")
    return first_sentence(captioner.caption(image, prompt_template))


def first_sentence(text: str) -> str:
    """Normalize model output to a single period-terminated sentence."""
    sentence = text.strip().split(".")[0].strip()
    if not sentence:
        raise ExporterError("captioner returned an empty caption")
    return sentence + "."


def _digest(*parts: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        h.update(part)
        h.update(b"|")
    return h.digest()


def _rng(*parts: bytes) -> np.random.Generator:
    return np.random.default_rng(int.from_bytes(_digest(*parts), "little"))


def _image_key(image: np.ndarray) -> bytes:
    return to_uint8(image).tobytes() + image.shape[0].to_bytes(4, "little") + image.shape[1].to_bytes(4, "little")


_ITEM_RE = re.compile(r"item [0-9a-f]{8}-\d+")


class HashCaptioner(Captioner):
    """Deterministic pseudo-captioner keyed on pixel content."""

    model_id = "hash-captioner"

    def caption(self, image, prompt=DEFAULT_CAPTION_PROMPT):
        key = _image_key(image)
        token = _digest(b"caption", key)[:4].hex()
        count = 2 + _digest(b"count", key)[0] % 3
        items = ", ".join(f"item {token}-{i}" for i in range(count))
        return f"a scene {token} showing {items}."


class StatsCaptioner(Captioner):
    """Model-free captioner describing simple image statistics."""

    model_id = "stats-captioner"

    _NAMES = ("red", "green", "blue")

    def caption(self, image, prompt=DEFAULT_CAPTION_PROMPT):
        means = image.reshape(-1, image.shape[2]).mean(axis=0)
        channel = self._NAMES[int(np.argmax(means))]
        tone = "bright" if means.mean() > 0.5 else "dark"
        return f"a {tone} image dominated by {channel} tones."


class HashDetector(Detector):
    """Grounds caption chunks to deterministic boxes derived from content."""

    model_id = "hash-detector"

    def _phrases(self, caption: str) -> list[str]:
        found = _ITEM_RE.findall(caption)
        if found:
            return found[:8]
        chunks = [c.strip() for c in re.split(r",| and ", caption.rstrip("."))]
        return [c for c in chunks if len(c) >= 3][:4]

    def detect(self, image, caption):
        key = _image_key(image)
        detections = []
        for phrase in self._phrases(caption):
            r = _rng(b"box", key, phrase.encode())
            x0 = 0.02 + 0.55 * float(r.random())
            y0 = 0.02 + 0.55 * float(r.random())
            x1 = min(x0 + 0.1 + 0.3 * float(r.random()), 0.98)
            y1 = min(y0 + 0.1 + 0.3 * float(r.random()), 0.98)
            confidence = 0.55 + 0.45 * float(r.random())
            detections.append(DetectedObject(phrase=phrase, box=(x0, y0, x1, y1), confidence=confidence))
        return detections


class HashEncoder(Encoder):
    """Deterministic content-hash encoder; outputs are raw (unnormalized)."""

    def __init__(self, dim: int = 768):
        if dim < 1:
            raise ModelLoadError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim
        self.model_id = f"hash-encoder-{dim}"

    def _vector(self, *parts: bytes) -> np.ndarray:
        return _rng(*parts).standard_normal(self.dim)

    def embed_image(self, image):
        return self._vector(b"image", _image_key(image))

    def embed_text(self, text):
        if not text:
            raise ExporterError("cannot embed empty text")
        return self._vector(b"text", text.encode("utf-8"))


class Blip2Captioner(Captioner):
    """BLIP-2 conditional-generation captioner via transformers."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.model_id = model_id
        self.device = device
        try:
            import torch  # noqa: F401
            from transformers import Blip2ForConditionalGeneration, Blip2Processor
        except ImportError as exc:
            raise ModelLoadError(
                f"captioner '{model_id}' needs torch and transformers installed "
                f"(pip install 'itm-exporter[models]'): {exc}"
            ) from exc
        hf_id = model_id if "/" in model_id else f"Salesforce/{model_id}"
        try:
            self._processor = Blip2Processor.from_pretrained(hf_id)
            self._model = Blip2ForConditionalGeneration.from_pretrained(hf_id).to(device).eval()
        except Exception as exc:
            raise ModelLoadError(
                f"cannot load captioner weights '{hf_id}': {exc}. "
                "Use 'hash-captioner' to exercise the plumbing without weights."
            ) from exc

    def caption(self, image, prompt=DEFAULT_CAPTION_PROMPT):
        import torch
        from PIL import Image as PilImage

        pil = PilImage.fromarray(to_uint8(image))
        inputs = self._processor(images=pil, text=prompt, return_tensors="pt").to(self.device)
        with torch.no_grad():
            ids = self._model.generate(**inputs, max_new_tokens=40)
        return self._processor.batch_decode(ids, skip_special_tokens=True)[0].strip()


class ClipEncoder(Encoder):
    """CLIP joint image/text encoder via transformers (projection space)."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.model_id = model_id
        self.device = device
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelLoadError(
                f"encoder '{model_id}' needs torch and transformers installed "
                f"(pip install 'itm-exporter[models]'): {exc}"
            ) from exc
        hf_id = model_id if "/" in model_id else f"openai/{model_id}"
        try:
            self._processor = CLIPProcessor.from_pretrained(hf_id)
            self._model = CLIPModel.from_pretrained(hf_id).to(device).eval()
        except Exception as exc:
            raise ModelLoadError(
                f"cannot load encoder weights '{hf_id}': {exc}. "
                "Use 'hash-encoder-768' to exercise the plumbing without weights."
            ) from exc
        self.dim = int(self._model.config.projection_dim)

    def embed_image(self, image):
        import torch
        from PIL import Image as PilImage

        pil = PilImage.fromarray(to_uint8(image))
        inputs = self._processor(images=pil, return_tensors="pt").to(self.device)
        with torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float64)

    def embed_text(self, text):
        import torch

        if not text:
            raise ExporterError("cannot embed empty text")
        inputs = self._processor(text=[text], return_tensors="pt", truncation=True).to(self.device)
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float64)


_HASH_ENCODER_RE = re.compile(r"^hash-encoder(?:-(\d+))?$")


def load_captioner(model_id: str, device: str = "cpu") -> Captioner:
    if model_id == HashCaptioner.model_id:
        return HashCaptioner()
    if model_id == StatsCaptioner.model_id:
        return StatsCaptioner()
    if model_id.startswith("blip2") or "/blip2" in model_id:
        return Blip2Captioner(model_id, device)
    raise ModelLoadError(
        f"unknown captioner '{model_id}'; known: blip2-* (needs weights), "
        "hash-captioner, stats-captioner"
    )


def load_detector(model_id: str, device: str = "cpu") -> Detector:
    if model_id == HashDetector.model_id:
        return HashDetector()
    if model_id.lower().startswith("glip"):
        raise ModelLoadError(
            f"detector '{model_id}' has no packaged runtime: GLIP ships only as a "
            "research repository, not as an installable package. Run detections "
            "from a GLIP checkout and export them, or use 'hash-detector' to "
            "exercise the plumbing."
        )
    raise ModelLoadError(f"unknown detector '{model_id}'; known: glip-* (unpackaged), hash-detector")


def load_encoder(model_id: str, device: str = "cpu") -> Encoder:
    match = _HASH_ENCODER_RE.match(model_id)
    if match:
        return HashEncoder(int(match.group(1) or 768))
    if model_id.startswith("clip") or "/clip" in model_id:
        return ClipEncoder(model_id, device)
    raise ModelLoadError(
        f"unknown encoder '{model_id}'; known: clip-* (needs weights), hash-encoder-<dim>"
    )
