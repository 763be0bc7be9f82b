"""Remote provider: talks to a model server over a small JSON/HTTP protocol.

Endpoints (POST, JSON in/out):
    /v1/caption      {"image_b64": str}                      -> {"caption": str}
    /v1/embed/image  {"image_b64": str, "region"?: [4 floats]} -> {"embedding": [float], "dim": int}
    /v1/embed/text   {"text": str}                           -> {"embedding": [float], "dim": int}
    /v1/detect       {"image_b64": str, "caption": str}      -> {"objects": [{phrase, box, confidence}]}

Failed requests are not retried.  At most `max_in_flight` requests are
outstanding at once, shared across threads.
"""

from __future__ import annotations

import base64
import threading

import numpy as np
import requests

from ..errors import DimensionMismatch, ProtocolViolation, RemoteError, Timeout
from ..representation import Embedding
from .base import ImageRef, ObjectDetection, Provider, ProviderConfig


class RemoteProvider(Provider):
    def __init__(self, config: ProviderConfig):
        super().__init__(config)
        if not config.endpoint:
            raise ValueError("remote provider needs an endpoint")
        self.endpoint = config.endpoint.rstrip("/")
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._session = requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.endpoint}{path}"
        with self._semaphore:
            try:
                response = self._session.post(url, json=payload, timeout=self.config.timeout_s)
            except requests.Timeout as exc:
                raise Timeout(f"request to {url} timed out after {self.config.timeout_s}s") from exc
            except requests.RequestException as exc:
                raise RemoteError(0, f"request to {url} failed: {exc}") from exc
        if response.status_code != 200:
            raise RemoteError(response.status_code, response.text)
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolViolation(f"{path} returned non-JSON body") from exc
        if not isinstance(body, dict):
            raise ProtocolViolation(f"{path} must return a JSON object")
        return body

    def _embedding_from(self, body: dict, path: str) -> Embedding:
        values = body.get("embedding")
        if not isinstance(values, list) or not values:
            raise ProtocolViolation(f"{path} must return a nonempty 'embedding' list")
        try:
            vec = np.asarray(values, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProtocolViolation(f"{path} embedding entries must be numbers") from exc
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ProtocolViolation(f"{path} embedding must be a flat list of finite numbers")
        declared = body.get("dim")
        if declared is not None and declared != vec.shape[0]:
            raise ProtocolViolation(f"{path} declared dim {declared} but sent {vec.shape[0]} values")
        if vec.shape[0] != self.config.embedding_dim:
            raise DimensionMismatch(
                f"server returned {vec.shape[0]}-dim embedding, configured for {self.config.embedding_dim}"
            )
        return Embedding(vec)

    @staticmethod
    def _image_payload(image: ImageRef) -> str:
        return base64.b64encode(image.read_bytes()).decode("ascii")

    def caption(self, image: ImageRef) -> str:
        body = self._post("/v1/caption", {"image_b64": self._image_payload(image)})
        caption = body.get("caption")
        if not isinstance(caption, str) or not caption:
            raise ProtocolViolation("/v1/caption must return a nonempty 'caption' string")
        return caption

    def embed_image(self, image: ImageRef) -> Embedding:
        payload: dict = {"image_b64": self._image_payload(image)}
        if image.region is not None:
            payload["region"] = list(image.region)
        return self._embedding_from(self._post("/v1/embed/image", payload), "/v1/embed/image")

    def embed_text(self, text: str) -> Embedding:
        return self._embedding_from(self._post("/v1/embed/text", {"text": text}), "/v1/embed/text")

    def detect_objects(self, image: ImageRef, caption: str) -> list[ObjectDetection]:
        body = self._post("/v1/detect", {"image_b64": self._image_payload(image), "caption": caption})
        raw = body.get("objects")
        if not isinstance(raw, list):
            raise ProtocolViolation("/v1/detect must return an 'objects' list")
        detections = []
        for entry in raw:
            if not isinstance(entry, dict):
                raise ProtocolViolation("/v1/detect objects must be JSON objects")
            try:
                detections.append(
                    ObjectDetection(
                        phrase=str(entry["phrase"]),
                        box=tuple(entry["box"]),
                        confidence=float(entry["confidence"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolViolation(f"/v1/detect returned a malformed object: {exc}") from exc
        return detections
