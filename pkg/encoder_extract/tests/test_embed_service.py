import base64
import io
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from encoder_extract.service import create_app


@pytest.fixture(scope="module")
def text_client(text_encoder_dir):
    with TestClient(create_app(text_encoder_dir, "text")) as client:
        yield client


@pytest.fixture(scope="module")
def image_client(image_encoder_dir):
    with TestClient(create_app(image_encoder_dir, "image")) as client:
        yield client


def png_b64(w=20, h=12, seed=0):
    rng = np.random.default_rng(seed)
    buf = io.BytesIO()
    Image.fromarray(rng.integers(0, 256, (h, w, 3), dtype=np.uint8)).save(
        buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


class TestHealth:
    def test_reports_encoder_and_dim(self, text_client, text_encoder_dir):
        h = text_client.get("/healthz").json()
        assert h["status"] == "ok"
        assert h["encoder_id"] == text_encoder_dir
        assert h["modality"] == "text"
        assert h["dim"] == 32
        assert h["pooling"] == "mean"

    def test_image_service(self, image_client):
        h = image_client.get("/healthz").json()
        assert h["modality"] == "image"
        assert h["pooling"] == "class"


class TestEmbed:
    def test_text_vector_matches_dim(self, text_client):
        r = text_client.post("/v1/embed", json={"text": "route this query"})
        assert r.status_code == 200
        vec = r.json()["vector"]
        assert len(vec) == 32
        assert all(np.isfinite(vec))

    def test_text_deterministic(self, text_client):
        a = text_client.post("/v1/embed", json={"text": "same input"}).json()
        b = text_client.post("/v1/embed", json={"text": "same input"}).json()
        np.testing.assert_allclose(a["vector"], b["vector"], atol=1e-5)

    def test_image_vector_matches_dim(self, image_client):
        r = image_client.post("/v1/embed", json={"image_b64": png_b64()})
        assert r.status_code == 200
        assert len(r.json()["vector"]) == 32

    def test_missing_field_is_400(self, text_client, image_client):
        assert text_client.post("/v1/embed", json={}).status_code == 400
        assert image_client.post("/v1/embed", json={}).status_code == 400
        # wrong modality payloads as well
        assert text_client.post(
            "/v1/embed", json={"image_b64": png_b64()}).status_code == 400
        assert image_client.post(
            "/v1/embed", json={"text": "x"}).status_code == 400

    def test_undecodable_image_is_400(self, image_client):
        bad = base64.b64encode(b"garbage").decode()
        assert image_client.post(
            "/v1/embed", json={"image_b64": bad}).status_code == 400

    def test_matches_offline_extraction(self, text_client, text_encoder_dir):
        from encoder_extract.encoders import TextEncoder

        offline = TextEncoder(text_encoder_dir).encode(["query about a chart"])
        served = text_client.post(
            "/v1/embed", json={"text": "query about a chart"}).json()["vector"]
        np.testing.assert_allclose(served, offline[0], atol=1e-5)


class TestConcurrency:
    def test_shared_encoder_serves_parallel_requests(self, text_client):
        results = {}
        lock = threading.Lock()

        def worker(t):
            for i in range(5):
                r = text_client.post("/v1/embed",
                                     json={"text": f"thread {t}"})
                assert r.status_code == 200
                with lock:
                    results.setdefault(t, []).append(tuple(r.json()["vector"]))

        threads = [threading.Thread(target=worker, args=(t,))
                   for t in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for t, vecs in results.items():
            assert len(vecs) == 5
            for v in vecs[1:]:
                np.testing.assert_allclose(v, vecs[0], atol=1e-5)
