import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from itmdetect.detection import ObjectDetection
from itmdetect.embedding_io import write_embedding_file
from itmdetect.errors import (
    DimensionMismatch,
    InvalidInput,
    MissingArtifact,
    ProtocolViolation,
    RemoteError,
    Timeout,
)
from itmdetect.manifest import (
    EmbeddingRef,
    EmbeddingRefs,
    SampleRecord,
    load_manifest,
    save_manifest,
)
from itmdetect.providers import (
    FileProvider,
    ImageRef,
    ProviderConfig,
    ProviderKind,
    RemoteProvider,
    SyntheticParams,
    SyntheticProvider,
    filter_detections,
    filter_indices,
    make_provider,
)
from itmdetect.providers.synthetic import write_synthetic_corpus
from itmdetect.representation import cosine_similarity, global_distance


def synthetic(dim=16, **params):
    cfg = ProviderConfig(
        kind=ProviderKind.SYNTHETIC,
        embedding_dim=dim,
        synthetic_params=SyntheticParams(**params),
    )
    return SyntheticProvider(cfg)


def angle_deg(u, v):
    return float(np.degrees(np.arccos(cosine_similarity(u, v))))


class TestSyntheticProvider:
    def test_same_bytes_same_outputs_bitwise(self):
        provider = synthetic()
        ref = ImageRef.from_bytes(b"real sample 7")
        cap1, cap2 = provider.caption(ref), provider.caption(ref)
        assert cap1 == cap2
        e1, e2 = provider.embed_image(ref), provider.embed_image(ref)
        assert np.array_equal(e1.values, e2.values)
        t1, t2 = provider.embed_text(cap1), provider.embed_text(cap1)
        assert np.array_equal(t1.values, t2.values)

    def test_two_instances_agree(self):
        a, b = synthetic(), synthetic()
        ref = ImageRef.from_bytes(b"fake sample 3")
        assert a.caption(ref) == b.caption(ref)
        assert np.array_equal(a.embed_image(ref).values, b.embed_image(ref).values)

    def test_different_bytes_different_caption(self):
        provider = synthetic()
        c1 = provider.caption(ImageRef.from_bytes(b"real a"))
        c2 = provider.caption(ImageRef.from_bytes(b"real b"))
        assert c1 != c2

    def test_seed_changes_embeddings(self):
        ref = ImageRef.from_bytes(b"real sample")
        e0 = synthetic(seed=0).embed_image(ref)
        e1 = synthetic(seed=1).embed_image(ref)
        assert not np.array_equal(e0.values, e1.values)

    def test_caption_mentions_every_detected_phrase(self):
        provider = synthetic(objects_per_image=3)
        ref = ImageRef.from_bytes(b"real xyz")
        caption = provider.caption(ref)
        detections = provider.detect_objects(ref, caption)
        assert len(detections) == 3
        for det in detections:
            assert det.phrase in caption

    def test_zero_objects_contract(self):
        provider = synthetic(objects_per_image=0)
        ref = ImageRef.from_bytes(b"real xyz")
        assert provider.detect_objects(ref, provider.caption(ref)) == []
        assert "nothing of note" in provider.caption(ref)

    def test_detection_boxes_and_confidences_valid(self):
        provider = synthetic(objects_per_image=5)
        for i in range(20):
            ref = ImageRef.from_bytes(f"real {i}".encode())
            for det in provider.detect_objects(ref, provider.caption(ref)):
                x0, y0, x1, y1 = det.box
                assert 0.0 <= x0 < x1 <= 1.0
                assert 0.0 <= y0 < y1 <= 1.0
                assert 0.5 <= det.confidence <= 1.0

    def test_embedding_norms_within_scale_band(self):
        provider = synthetic()
        for i in range(50):
            ref = ImageRef.from_bytes(f"real {i}".encode())
            norm = float(np.linalg.norm(provider.embed_image(ref).values))
            assert 0.5 <= norm <= 2.0

    def test_global_angle_statistics(self):
        # The image-caption angle should be centred on the configured
        # alignment with spread set by the noise parameter.
        provider = synthetic(
            dim=32, real_align_deg=20.0, fake_align_deg=60.0, noise_deg=5.0
        )
        for marker, expected in ((b"real", 20.0), (b"fake", 60.0)):
            angles = []
            for i in range(400):
                ref = ImageRef.from_bytes(marker + f" {i}".encode())
                img = provider.embed_image(ref)
                txt = provider.embed_text(provider.caption(ref))
                angles.append(angle_deg(img, txt))
            mean = float(np.mean(angles))
            std = float(np.std(angles))
            assert abs(mean - expected) < 1.0, (marker, mean)
            assert 3.5 < std < 6.5, (marker, std)

    def test_fake_misalignment_exceeds_real_on_average(self):
        provider = synthetic(dim=32)
        norms = {"real": [], "fake": []}
        for name in norms:
            for i in range(500):
                ref = ImageRef.from_bytes(f"{name} {i}".encode())
                img = provider.embed_image(ref)
                txt = provider.embed_text(provider.caption(ref))
                norms[name].append(global_distance(img, txt).norm())
        assert np.mean(norms["fake"]) > np.mean(norms["real"]) + 0.3

    def test_object_region_embedding_matches_detected_box(self):
        provider = synthetic(objects_per_image=2)
        ref = ImageRef.from_bytes(b"real region test")
        detections = provider.detect_objects(ref, provider.caption(ref))
        crop = ImageRef.from_bytes(b"real region test", region=detections[0].box)
        object_emb = provider.embed_image(crop)
        # Same request again is stable, and distinct from the whole image.
        assert np.array_equal(object_emb.values, provider.embed_image(crop).values)
        assert not np.array_equal(object_emb.values, provider.embed_image(ref).values)

    def test_phrase_embedding_tracks_object_embedding(self):
        provider = synthetic(
            dim=32, real_align_deg=20.0, fake_align_deg=60.0, noise_deg=0.0
        )
        ref = ImageRef.from_bytes(b"real tracked")
        detections = provider.detect_objects(ref, provider.caption(ref))
        crop = ImageRef.from_bytes(b"real tracked", region=detections[0].box)
        obj = provider.embed_image(crop)
        phrase = provider.embed_text(detections[0].phrase)
        assert abs(angle_deg(obj, phrase) - 20.0) < 1e-6

    def test_local_alignment_overrides(self):
        provider = synthetic(
            dim=32,
            real_align_deg=10.0,
            fake_align_deg=10.0,
            local_real_align_deg=5.0,
            local_fake_align_deg=80.0,
            noise_deg=0.0,
        )
        for marker, expected in ((b"real", 5.0), (b"fake", 80.0)):
            ref = ImageRef.from_bytes(marker + b" override")
            det = provider.detect_objects(ref, provider.caption(ref))[0]
            obj = provider.embed_image(ImageRef.from_bytes(ref.payload, region=det.box))
            phrase = provider.embed_text(det.phrase)
            assert abs(angle_deg(obj, phrase) - expected) < 1e-6

    def test_empty_text_rejected(self):
        with pytest.raises(InvalidInput):
            synthetic().embed_text("")

    def test_free_text_still_embeds(self):
        emb = synthetic().embed_text("no scene token here")
        assert emb.dim == 16

    def test_dim_below_two_rejected(self):
        with pytest.raises(ValueError):
            synthetic(dim=1)

    def test_embedding_dim_respected(self):
        for dim in (2, 64, 768):
            provider = synthetic(dim=dim)
            assert provider.embed_image(ImageRef.from_bytes(b"real d")).dim == dim


class TestWriteSyntheticCorpus:
    def test_layout_and_labels(self, tmp_path):
        manifest_path = write_synthetic_corpus(tmp_path / "corpus", n_real=3, n_fake=2)
        records = load_manifest(manifest_path)
        assert [r.id for r in records] == [
            "real-00000",
            "real-00001",
            "real-00002",
            "fake-00000",
            "fake-00001",
        ]
        assert [r.label for r in records] == [0, 0, 0, 1, 1]
        for record in records:
            image = manifest_path.parent / record.image
            assert image.is_file()
            marker = b"real" if record.label == 0 else b"fake"
            assert marker in image.read_bytes()

    def test_deterministic_bytes(self, tmp_path):
        p1 = write_synthetic_corpus(tmp_path / "a", n_real=2, n_fake=2, seed=9)
        p2 = write_synthetic_corpus(tmp_path / "b", n_real=2, n_fake=2, seed=9)
        assert p1.read_bytes() == p2.read_bytes()
        for rel in ("images/real_00000.img", "images/fake_00001.img"):
            assert (p1.parent / rel).read_bytes() == (p2.parent / rel).read_bytes()


class TestFilterDetections:
    def boxes(self, confidences):
        return [
            ObjectDetection(f"p{i}", (0.1, 0.1, 0.5, 0.5), c)
            for i, c in enumerate(confidences)
        ]

    def test_confidence_floor(self):
        dets = self.boxes([0.9, 0.2, 0.31, 0.29])
        assert filter_indices(dets, min_confidence=0.3, max_objects=8) == [0, 2]

    def test_cap_keeps_highest_in_original_order(self):
        dets = self.boxes([0.6, 0.9, 0.5, 0.8, 0.7])
        assert filter_indices(dets, min_confidence=0.0, max_objects=3) == [1, 3, 4]

    def test_tie_prefers_earlier(self):
        dets = self.boxes([0.5, 0.5, 0.5])
        assert filter_indices(dets, min_confidence=0.0, max_objects=2) == [0, 1]

    def test_filter_detections_mirrors_indices(self):
        dets = self.boxes([0.6, 0.9, 0.1, 0.8])
        kept = filter_detections(dets, min_confidence=0.3, max_objects=2)
        assert kept == [dets[1], dets[3]]

    def test_empty_input(self):
        assert filter_indices([], min_confidence=0.3, max_objects=8) == []


@pytest.fixture
def file_artifacts(tmp_path):
    root = tmp_path / "artifacts"
    (root / "images").mkdir(parents=True)
    image = root / "images" / "a.png"
    image.write_bytes(b"not really a png, never decoded")

    rows = np.array(
        [
            [1.1, -2.2, 3.3, 4.4],  # global image
            [0.1, 0.2, 0.3, 0.4],  # caption text
            [5.0, 6.0, 7.0, 8.0],  # object image 0
            [-1.0, -2.0, -3.0, -4.0],  # object phrase 0
        ],
        dtype=np.float32,
    )
    write_embedding_file(root / "emb.item", rows)

    record = SampleRecord(
        id="a",
        image="images/a.png",
        label=0,
        caption="a cat on a mat",
        objects=[ObjectDetection("a cat", (0.1, 0.2, 0.6, 0.7), 0.9)],
        embedding_refs=EmbeddingRefs(
            global_image=EmbeddingRef("emb.item", 0),
            caption_text=EmbeddingRef("emb.item", 1),
            object_images=[EmbeddingRef("emb.item", 2)],
            object_phrases=[EmbeddingRef("emb.item", 3)],
        ),
    )
    bare = SampleRecord(id="b", image="images/b.png", label=1)
    (root / "images" / "b.png").write_bytes(b"bare")
    save_manifest(root / "manifest.jsonl", [record, bare])
    return root, rows


def file_provider(root):
    return FileProvider(
        ProviderConfig(kind=ProviderKind.FILE, embedding_dim=4, artifact_root=root)
    )


class TestFileProvider:
    def test_caption_served_verbatim(self, file_artifacts):
        root, _ = file_artifacts
        provider = file_provider(root)
        ref = ImageRef.from_path(root / "images" / "a.png")
        assert provider.caption(ref) == "a cat on a mat"

    def test_global_embedding_is_stored_f32_row(self, file_artifacts):
        root, rows = file_artifacts
        provider = file_provider(root)
        emb = provider.embed_image(ImageRef.from_path(root / "images" / "a.png"))
        assert emb.values.dtype == np.float64
        np.testing.assert_array_equal(emb.values, rows[0].astype(np.float64))

    def test_object_embedding_by_region(self, file_artifacts):
        root, rows = file_artifacts
        provider = file_provider(root)
        crop = ImageRef.from_path(root / "images" / "a.png", region=(0.1, 0.2, 0.6, 0.7))
        np.testing.assert_array_equal(
            provider.embed_image(crop).values, rows[2].astype(np.float64)
        )

    def test_text_embeddings_for_caption_and_phrase(self, file_artifacts):
        root, rows = file_artifacts
        provider = file_provider(root)
        np.testing.assert_array_equal(
            provider.embed_text("a cat on a mat").values, rows[1].astype(np.float64)
        )
        np.testing.assert_array_equal(
            provider.embed_text("a cat").values, rows[3].astype(np.float64)
        )

    def test_detections_come_from_manifest(self, file_artifacts):
        root, _ = file_artifacts
        provider = file_provider(root)
        ref = ImageRef.from_path(root / "images" / "a.png")
        assert provider.detect_objects(ref, "whatever") == [
            ObjectDetection("a cat", (0.1, 0.2, 0.6, 0.7), 0.9)
        ]

    def test_manifest_path_accepted_directly(self, file_artifacts):
        root, _ = file_artifacts
        provider = FileProvider(
            ProviderConfig(
                kind=ProviderKind.FILE,
                embedding_dim=4,
                artifact_root=root / "manifest.jsonl",
            )
        )
        ref = ImageRef.from_path(root / "images" / "a.png")
        assert provider.caption(ref) == "a cat on a mat"

    def test_unknown_image_raises(self, file_artifacts):
        root, _ = file_artifacts
        provider = file_provider(root)
        with pytest.raises(MissingArtifact):
            provider.caption(ImageRef.from_path(root / "images" / "zzz.png"))

    def test_missing_caption_raises(self, file_artifacts):
        root, _ = file_artifacts
        provider = file_provider(root)
        with pytest.raises(MissingArtifact):
            provider.caption(ImageRef.from_path(root / "images" / "b.png"))

    def test_missing_refs_raise(self, file_artifacts):
        root, _ = file_artifacts
        provider = file_provider(root)
        with pytest.raises(MissingArtifact):
            provider.embed_image(ImageRef.from_path(root / "images" / "b.png"))
        with pytest.raises(MissingArtifact):
            provider.detect_objects(ImageRef.from_path(root / "images" / "b.png"), "c")

    def test_unmatched_region_raises(self, file_artifacts):
        root, _ = file_artifacts
        provider = file_provider(root)
        crop = ImageRef.from_path(root / "images" / "a.png", region=(0.0, 0.0, 0.9, 0.9))
        with pytest.raises(MissingArtifact):
            provider.embed_image(crop)

    def test_unknown_text_raises(self, file_artifacts):
        root, _ = file_artifacts
        with pytest.raises(MissingArtifact):
            file_provider(root).embed_text("never recorded")

    def test_bytes_image_rejected(self, file_artifacts):
        root, _ = file_artifacts
        with pytest.raises(MissingArtifact):
            file_provider(root).caption(ImageRef.from_bytes(b"raw"))

    def test_requires_artifact_root(self):
        with pytest.raises(MissingArtifact):
            FileProvider(ProviderConfig(kind=ProviderKind.FILE, embedding_dim=4))

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(MissingArtifact):
            file_provider(tmp_path)

    def test_row_out_of_range_raises(self, file_artifacts):
        root, _ = file_artifacts
        records = load_manifest(root / "manifest.jsonl")
        bad = records[0]
        object.__setattr__(bad.embedding_refs, "global_image", EmbeddingRef("emb.item", 99))
        save_manifest(root / "manifest.jsonl", records)
        provider = file_provider(root)
        with pytest.raises(MissingArtifact):
            provider.embed_image(ImageRef.from_path(root / "images" / "a.png"))


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw)
        except ValueError:
            payload = raw
        with self.server.lock:
            self.server.requests.append((self.path, payload))
            self.server.active += 1
            self.server.max_active = max(self.server.max_active, self.server.active)
        try:
            route = self.server.routes.get(self.path)
            if route is None:
                status, body = 404, b"no such route"
            else:
                status, body = route(payload) if callable(route) else route
        finally:
            with self.server.lock:
                self.server.active -= 1
        data = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def model_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.routes = {}
    server.requests = []
    server.lock = threading.Lock()
    server.active = 0
    server.max_active = 0
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def remote(server, dim=4, **overrides):
    cfg = ProviderConfig(
        kind=ProviderKind.REMOTE,
        embedding_dim=dim,
        endpoint=f"http://127.0.0.1:{server.server_address[1]}",
        **overrides,
    )
    return RemoteProvider(cfg)


class TestRemoteProvider:
    def test_caption_round_trip_and_request_shape(self, model_server):
        model_server.routes["/v1/caption"] = (200, {"caption": "a remote caption"})
        provider = remote(model_server)
        assert provider.caption(ImageRef.from_bytes(b"pixels")) == "a remote caption"
        path, payload = model_server.requests[0]
        assert path == "/v1/caption"
        assert set(payload) == {"image_b64"}
        assert base64.b64decode(payload["image_b64"]) == b"pixels"

    def test_embed_image_region_field(self, model_server):
        model_server.routes["/v1/embed/image"] = (
            200,
            {"embedding": [1.0, 2.0, 3.0, 4.0], "dim": 4},
        )
        provider = remote(model_server)
        provider.embed_image(ImageRef.from_bytes(b"x"))
        provider.embed_image(ImageRef.from_bytes(b"x", region=(0.1, 0.2, 0.3, 0.4)))
        (_, without), (_, with_region) = model_server.requests
        assert "region" not in without
        assert with_region["region"] == [0.1, 0.2, 0.3, 0.4]

    def test_embed_text_values(self, model_server):
        model_server.routes["/v1/embed/text"] = (
            200,
            {"embedding": [0.5, -0.5, 1.5, 2.5], "dim": 4},
        )
        emb = remote(model_server).embed_text("hello")
        np.testing.assert_array_equal(emb.values, [0.5, -0.5, 1.5, 2.5])
        assert model_server.requests[0][1] == {"text": "hello"}

    def test_detect_round_trip(self, model_server):
        model_server.routes["/v1/detect"] = (
            200,
            {
                "objects": [
                    {"phrase": "a dog", "box": [0.1, 0.1, 0.4, 0.5], "confidence": 0.75}
                ]
            },
        )
        detections = remote(model_server).detect_objects(
            ImageRef.from_bytes(b"img"), "a dog outside"
        )
        assert detections == [ObjectDetection("a dog", (0.1, 0.1, 0.4, 0.5), 0.75)]
        _, payload = model_server.requests[0]
        assert set(payload) == {"image_b64", "caption"}

    def test_http_error_carries_status_and_excerpt(self, model_server):
        model_server.routes["/v1/caption"] = (500, b"boom " * 100)
        with pytest.raises(RemoteError) as exc_info:
            remote(model_server).caption(ImageRef.from_bytes(b"x"))
        assert exc_info.value.status == 500
        assert len(exc_info.value.body) <= 203
        assert "boom" in str(exc_info.value)

    def test_non_json_success_body_is_protocol_violation(self, model_server):
        model_server.routes["/v1/caption"] = (200, b"<html>hi</html>")
        with pytest.raises(ProtocolViolation):
            remote(model_server).caption(ImageRef.from_bytes(b"x"))

    def test_wrong_embedding_width_is_dimension_mismatch(self, model_server):
        model_server.routes["/v1/embed/text"] = (
            200,
            {"embedding": [1.0, 2.0], "dim": 2},
        )
        with pytest.raises(DimensionMismatch):
            remote(model_server, dim=4).embed_text("t")

    def test_declared_dim_disagreeing_with_payload(self, model_server):
        model_server.routes["/v1/embed/text"] = (
            200,
            {"embedding": [1.0, 2.0, 3.0, 4.0], "dim": 5},
        )
        with pytest.raises(ProtocolViolation):
            remote(model_server).embed_text("t")

    @pytest.mark.parametrize(
        "body",
        [
            {"embedding": []},
            {"embedding": "nope"},
            {},
            {"embedding": [1.0, float("nan"), 2.0, 3.0]},
        ],
        ids=["empty", "non-list", "missing", "nan"],
    )
    def test_malformed_embedding_bodies(self, model_server, body):
        # NaN cannot ride through json.dumps as strict JSON; send it raw.
        payload = json.dumps(body).replace('"nan"', "NaN").encode()
        model_server.routes["/v1/embed/text"] = (200, payload)
        with pytest.raises(ProtocolViolation):
            remote(model_server).embed_text("t")

    def test_malformed_detection_box(self, model_server):
        model_server.routes["/v1/detect"] = (
            200,
            {"objects": [{"phrase": "p", "box": [0.9, 0.1, 0.2, 0.5], "confidence": 0.8}]},
        )
        with pytest.raises(ProtocolViolation):
            remote(model_server).detect_objects(ImageRef.from_bytes(b"x"), "c")

    def test_missing_caption_field(self, model_server):
        model_server.routes["/v1/caption"] = (200, {"text": "wrong key"})
        with pytest.raises(ProtocolViolation):
            remote(model_server).caption(ImageRef.from_bytes(b"x"))

    def test_timeout(self, model_server):
        def slow(_payload):
            time.sleep(0.5)
            return 200, {"caption": "late"}

        model_server.routes["/v1/caption"] = slow
        provider = remote(model_server, timeout_s=0.1)
        with pytest.raises(Timeout):
            provider.caption(ImageRef.from_bytes(b"x"))

    def test_connection_failure_is_remote_error(self, model_server):
        port = model_server.server_address[1]
        cfg = ProviderConfig(
            kind=ProviderKind.REMOTE,
            embedding_dim=4,
            endpoint=f"http://127.0.0.1:{port}",
        )
        model_server.shutdown()
        model_server.server_close()
        provider = RemoteProvider(cfg)
        with pytest.raises(RemoteError) as exc_info:
            provider.caption(ImageRef.from_bytes(b"x"))
        assert exc_info.value.status == 0

    def test_in_flight_cap_respected(self, model_server):
        def slow(_payload):
            time.sleep(0.15)
            return 200, {"caption": "ok"}

        model_server.routes["/v1/caption"] = slow
        provider = remote(model_server, max_in_flight=2)
        threads = [
            threading.Thread(
                target=provider.caption, args=(ImageRef.from_bytes(f"{i}".encode()),)
            )
            for i in range(6)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert model_server.max_active <= 2
        assert len(model_server.requests) == 6


class TestMakeProvider:
    def test_dispatch(self, tmp_path, file_artifacts):
        root, _ = file_artifacts
        assert isinstance(
            make_provider(ProviderConfig(kind=ProviderKind.SYNTHETIC, embedding_dim=8)),
            SyntheticProvider,
        )
        assert isinstance(
            make_provider(
                ProviderConfig(kind=ProviderKind.FILE, embedding_dim=4, artifact_root=root)
            ),
            FileProvider,
        )
        assert isinstance(
            make_provider(
                ProviderConfig(
                    kind=ProviderKind.REMOTE,
                    embedding_dim=4,
                    endpoint="http://127.0.0.1:1",
                )
            ),
            RemoteProvider,
        )
