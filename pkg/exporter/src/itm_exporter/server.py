"""HTTP sidecar implementing the remote-provider protocol.

POST routes (JSON in/out):
    /v1/caption      {"image_b64": str}                        -> {"caption": str}
    /v1/embed/image  {"image_b64": str, "region"?: [4 float]}  -> {"embedding": [...], "dim": n}
    /v1/embed/text   {"text": str}                             -> {"embedding": [...], "dim": n}
    /v1/detect       {"image_b64": str, "caption": str}        -> {"objects": [...]}

Client mistakes (malformed JSON, bad base64, undecodable images, invalid
regions, missing fields) return 400; model failures return 500 with the
error text.  Handlers are stateless; concurrency is bounded by a worker
semaphore.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .backends import (
    DEFAULT_CAPTIONER,
    DEFAULT_DETECTOR,
    DEFAULT_ENCODER,
    caption_prompted,
    load_captioner,
    load_detector,
    load_encoder,
)
from .errors import ImageReadError
from .preprocess import check_box, global_view, load_rgb, object_view


@dataclass(frozen=True)
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8008
    captioner_id: str = DEFAULT_CAPTIONER
    detector_id: str = DEFAULT_DETECTOR
    encoder_id: str = DEFAULT_ENCODER
    device: str = "cpu"
    max_workers: int = 8


class _BadRequest(Exception):
    """Client-side input problem -> HTTP 400."""


def _field(payload: dict, name: str, kind: type) -> object:
    value = payload.get(name)
    if not isinstance(value, kind) or (kind is str and not value):
        raise _BadRequest(f"field '{name}' must be a nonempty {kind.__name__}")
    return value


def _decode_image(payload: dict):
    data = _field(payload, "image_b64", str)
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _BadRequest(f"field 'image_b64' is not valid base64: {exc}") from exc
    try:
        return load_rgb(raw)
    except ImageReadError as exc:
        raise _BadRequest(str(exc)) from exc


class _Handler(BaseHTTPRequestHandler):
    server_version = "itm-exporter"

    def log_message(self, *args):  # quiet by default; this is a sidecar
        pass

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        route = self.server.routes.get(self.path)
        if route is None:
            self._send(404, {"error": f"no such route: {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
            except ValueError as exc:
                raise _BadRequest(f"request body is not valid JSON: {exc}") from exc
            if not isinstance(payload, dict):
                raise _BadRequest("request body must be a JSON object")
            with self.server.workers:
                self._send(200, route(payload))
        except _BadRequest as exc:
            self._send(400, {"error": str(exc)})
        except Exception as exc:  # model failure
            self._send(500, {"error": f"{type(exc).__name__}: {exc}"})


def build_server(config: ServeConfig, *, captioner=None, detector=None, encoder=None) -> ThreadingHTTPServer:
    """Construct the server with models loaded; callers may inject backends."""
    captioner = captioner or load_captioner(config.captioner_id, config.device)
    detector = detector or load_detector(config.detector_id, config.device)
    encoder = encoder or load_encoder(config.encoder_id, config.device)

    def embedding_body(vec) -> dict:
        values = [float(v) for v in vec]
        return {"embedding": values, "dim": len(values)}

    def route_caption(payload: dict) -> dict:
        image = _decode_image(payload)
        return {"caption": caption_prompted(captioner, image)}

    def route_embed_image(payload: dict) -> dict:
        image = _decode_image(payload)
        region = payload.get("region")
        if region is None:
            view = global_view(image)
        else:
            try:
                view = object_view(image, check_box(region))
            except (TypeError, ValueError) as exc:
                raise _BadRequest(f"invalid region: {exc}") from exc
        return embedding_body(encoder.embed_image(view))

    def route_embed_text(payload: dict) -> dict:
        return embedding_body(encoder.embed_text(_field(payload, "text", str)))

    def route_detect(payload: dict) -> dict:
        image = _decode_image(payload)
        caption = _field(payload, "caption", str)
        return {
            "objects": [
                {"phrase": d.phrase, "box": list(d.box), "confidence": d.confidence}
                for d in detector.detect(image, caption)
            ]
        }

    server = ThreadingHTTPServer((config.host, config.port), _Handler)
    server.routes = {
        "/v1/caption": route_caption,
        "/v1/embed/image": route_embed_image,
        "/v1/embed/text": route_embed_text,
        "/v1/detect": route_detect,
    }
    server.workers = threading.Semaphore(config.max_workers)
    server.encoder_dim = encoder.dim
    return server


def serve(config: ServeConfig) -> None:
    """Run the sidecar until interrupted."""
    server = build_server(config)
    host, port = server.server_address[:2]
    print(f"serving /v1/* on http://{host}:{port} (encoder dim {server.encoder_dim})")
    try:
        server.serve_forever()
    finally:
        server.server_close()
