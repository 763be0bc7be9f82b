"""Synthetic provider: a pure function of (seed, image bytes, parameters).

Every synthetic image hashes to a 12-hex-char token plus a class tag ('r'
or 'f', taken from a "real"/"fake" marker in the bytes, else from hash
parity).  The token is embedded in the caption and in every object phrase,
so the text side can reconstruct the matching image direction without any
shared state: a caption embeds at the configured class angle (plus noise)
from its image's direction, and each object phrase does the same against
its object crop's direction.

Embeddings are deliberately NOT unit length (a deterministic scale in
[0.5, 2] is applied) so the core normalization actually matters.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np

from ..errors import InvalidInput
from ..representation import Embedding
from .base import ImageRef, ObjectDetection, Provider, ProviderConfig

_SCENE_RE = re.compile(r"scene ([0-9a-f]{12})([rf])\b")
_OBJECT_RE = re.compile(r"object ([0-9a-f]{12})([rf])-(\d+)\b")

_BOX_MATCH_TOL = 1e-9
# Text embeddings rotate away from their image partly along one corpus-wide
# direction (a systematic image-text offset, as joint spaces exhibit) and
# partly along a per-item direction.  The angles are exact either way; the
# shared component is what gives a downstream classifier geometry to grab
# beyond the bare misalignment norm.
_SHARED_PLANE_WEIGHT = 0.75


class SyntheticProvider(Provider):
    def __init__(self, config: ProviderConfig):
        super().__init__(config)
        if config.embedding_dim < 2:
            raise ValueError("synthetic provider needs embedding_dim >= 2 to rotate text away from image")
        self.params = config.synthetic_params
        self.dim = config.embedding_dim

    # --- deterministic streams ---

    def _rng(self, *parts) -> np.random.Generator:
        h = hashlib.blake2b(digest_size=16)
        h.update(str(self.params.seed).encode())
        for part in parts:
            h.update(b"|")
            h.update(part if isinstance(part, bytes) else str(part).encode())
        return np.random.default_rng(int.from_bytes(h.digest(), "little"))

    def _unit(self, *parts) -> np.ndarray:
        v = self._rng(*parts).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def _scale(self, *parts) -> float:
        return 0.5 + 1.5 * float(self._rng("scale", *parts).random())

    def _token(self, data: bytes) -> str:
        h = hashlib.blake2b(digest_size=6)
        h.update(str(self.params.seed).encode())
        h.update(data)
        digest = h.digest()
        if b"fake" in data:
            tag = "f"
        elif b"real" in data:
            tag = "r"
        else:
            tag = "f" if digest[0] & 1 else "r"
        return digest.hex() + tag

    def _rotated(self, base: np.ndarray, angle_deg: float, *rot_parts) -> np.ndarray:
        """Unit vector at exactly angle_deg from base."""
        mix = _SHARED_PLANE_WEIGHT
        raw = mix * self._unit("shared-plane") + (1.0 - mix**2) ** 0.5 * self._unit("plane", *rot_parts)
        w = raw - np.dot(raw, base) * base
        norm = np.linalg.norm(w)
        if norm < 1e-9:  # raw essentially parallel to base; re-derive
            raw = self._unit("plane-retry", *rot_parts)
            w = raw - np.dot(raw, base) * base
            norm = np.linalg.norm(w)
        w /= norm
        theta = np.deg2rad(angle_deg)
        return np.cos(theta) * base + np.sin(theta) * w

    def _angle(self, align_deg: float, *noise_parts) -> float:
        eps = float(self._rng("angle-noise", *noise_parts).standard_normal())
        return align_deg + self.params.noise_deg * eps

    def _boxes(self, token: str) -> list[tuple[float, float, float, float]]:
        boxes = []
        for i in range(self.params.objects_per_image):
            r = self._rng("box", token, i)
            x0 = 0.02 + 0.58 * float(r.random())
            y0 = 0.02 + 0.58 * float(r.random())
            x1 = min(x0 + 0.08 + 0.30 * float(r.random()), 0.99)
            y1 = min(y0 + 0.08 + 0.30 * float(r.random()), 0.99)
            boxes.append((x0, y0, x1, y1))
        return boxes

    # --- provider operations ---

    def caption(self, image: ImageRef) -> str:
        token = self._token(image.read_bytes())
        k = self.params.objects_per_image
        if k == 0:
            return f"an empty synthetic scene {token} with nothing of note."
        phrases = " and ".join(f"object {token}-{i}" for i in range(k))
        return f"a synthetic scene {token} showing {phrases}."

    def embed_image(self, image: ImageRef) -> Embedding:
        token = self._token(image.read_bytes())
        if image.region is None:
            direction = self._unit("image", token)
            return Embedding(self._scale("image", token) * direction)
        for i, box in enumerate(self._boxes(token)):
            if max(abs(a - b) for a, b in zip(box, image.region)) < _BOX_MATCH_TOL:
                direction = self._unit("object-image", token, i)
                return Embedding(self._scale("object-image", token, i) * direction)
        # A crop that is not one of this image's objects: still deterministic.
        key = ",".join(f"{v:.9f}" for v in image.region)
        return Embedding(self._scale("crop", token, key) * self._unit("crop", token, key))

    def embed_text(self, text: str) -> Embedding:
        if not text:
            raise InvalidInput("cannot embed empty text")
        scene = _SCENE_RE.search(text)
        if scene is not None:
            token = scene.group(1) + scene.group(2)
            fake = scene.group(2) == "f"
            base = self._unit("image", token)
            angle = self._angle(self.params.global_align(fake), "global", token)
            vec = self._rotated(base, angle, "global", token)
            return Embedding(self._scale("caption", token) * vec)
        obj = _OBJECT_RE.search(text)
        if obj is not None:
            token = obj.group(1) + obj.group(2)
            fake = obj.group(2) == "f"
            i = int(obj.group(3))
            base = self._unit("object-image", token, i)
            angle = self._angle(self.params.local_align(fake), "local", token, i)
            vec = self._rotated(base, angle, "local", token, i)
            return Embedding(self._scale("phrase", token, i) * vec)
        return Embedding(self._scale("text", text) * self._unit("text", text))

    def detect_objects(self, image: ImageRef, caption: str) -> list[ObjectDetection]:
        token = self._token(image.read_bytes())
        detections = []
        for i, box in enumerate(self._boxes(token)):
            conf = 0.5 + 0.5 * float(self._rng("conf", token, i).random())
            detections.append(ObjectDetection(phrase=f"object {token}-{i}", box=box, confidence=conf))
        return detections


def write_synthetic_corpus(
    root,
    n_real: int,
    n_fake: int,
    seed: int = 0,
    images_dir: str = "images",
) -> Path:
    """Lay down a labeled corpus of synthetic image files plus its manifest.

    The files carry class markers in their bytes, which is all the
    SyntheticProvider needs; returns the manifest path.
    """
    root = Path(root)
    (root / images_dir).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for label, name, count in ((0, "real", n_real), (1, "fake", n_fake)):
        for i in range(count):
            rel = f"{images_dir}/{name}_{i:05d}.img"
            content = f"synthetic-image {name} {i} {rng.integers(0, 1 << 62)}".encode()
            (root / rel).write_bytes(content)
            lines.append(json.dumps({"id": f"{name}-{i:05d}", "image": rel, "label": label}))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
