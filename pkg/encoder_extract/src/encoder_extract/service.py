"""HTTP embed service implementing the gateway's embed-upstream contract.

POST /v1/embed with {"text": ...} (text encoders) or {"image_b64": ...}
(image encoders) returns {"vector": [...]}. The encoder is loaded once and
shared, read-only, across requests.
"""
from __future__ import annotations

import base64
import io

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .encoders import build_encoder


class EmbedRequest(BaseModel):
    text: str | None = None
    image_b64: str | None = None


def create_app(encoder_id: str, modality: str, device: str = "cpu") -> FastAPI:
    encoder = build_encoder(modality, encoder_id, device)
    app = FastAPI()
    app.state.encoder = encoder

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "encoder_id": encoder.encoder_id,
                "modality": encoder.modality, "dim": encoder.dim,
                "pooling": encoder.pooling}

    @app.post("/v1/embed")
    def embed(req: EmbedRequest):
        if modality == "text":
            if req.text is None:
                raise HTTPException(400, "text encoder needs a 'text' field")
            vec = encoder.encode([req.text])[0]
        else:
            if req.image_b64 is None:
                raise HTTPException(400,
                                    "image encoder needs an 'image_b64' field")
            from PIL import Image
            try:
                raw = base64.b64decode(req.image_b64, validate=True)
                with Image.open(io.BytesIO(raw)) as img:
                    image = img.convert("RGB")
            except Exception:
                raise HTTPException(400, "undecodable image_b64")
            vec = encoder.encode([image])[0]
        return {"vector": [float(x) for x in vec]}

    return app


def serve_embed(encoder_id: str, modality: str, port: int,
                host: str = "127.0.0.1", device: str = "cpu"):
    import uvicorn

    uvicorn.run(create_app(encoder_id, modality, device),
                host=host, port=port)
