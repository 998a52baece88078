"""Thin wrappers around pretrained Hugging Face encoders.

One encoder instance per process; inference is wrapped in a lock so a single
read-only model can serve concurrent callers.
"""
from __future__ import annotations

import threading
from typing import Sequence

import numpy as np


class TextEncoder:
    """Sentence vectors: mean of the final hidden states over real tokens."""

    pooling = "mean"
    modality = "text"

    def __init__(self, encoder_id: str, device: str = "cpu"):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self.encoder_id = encoder_id
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(encoder_id)
        self.model = AutoModel.from_pretrained(encoder_id).to(device).eval()
        self.dim = int(self.model.config.hidden_size)
        self._torch = torch
        self._lock = threading.Lock()
        max_pos = getattr(self.model.config, "max_position_embeddings", 512)
        self.max_length = min(int(self.tokenizer.model_max_length), max_pos)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        torch = self._torch
        with self._lock, torch.no_grad():
            enc = self.tokenizer(list(texts), padding=True, truncation=True,
                                 max_length=self.max_length,
                                 return_tensors="pt").to(self.device)
            hidden = self.model(**enc).last_hidden_state
            mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(1) / mask.sum(1).clamp(min=1.0)
        return pooled.cpu().numpy().astype(np.float32)


class ImageEncoder:
    """Image vectors: the class-token representation of a vision encoder."""

    pooling = "class"
    modality = "image"

    def __init__(self, encoder_id: str, device: str = "cpu"):
        import torch
        from transformers import AutoImageProcessor, AutoModel

        self.encoder_id = encoder_id
        self.device = device
        self.processor = AutoImageProcessor.from_pretrained(encoder_id)
        self.model = AutoModel.from_pretrained(encoder_id).to(device).eval()
        self.dim = int(self.model.config.hidden_size)
        self._torch = torch
        self._lock = threading.Lock()

    def encode(self, images) -> np.ndarray:
        """images: sequence of PIL images (converted to RGB by the caller)."""
        torch = self._torch
        with self._lock, torch.no_grad():
            enc = self.processor(images=list(images),
                                 return_tensors="pt").to(self.device)
            hidden = self.model(**enc).last_hidden_state
            pooled = hidden[:, 0]
        return pooled.cpu().numpy().astype(np.float32)


def build_encoder(modality: str, encoder_id: str, device: str = "cpu"):
    if modality == "text":
        return TextEncoder(encoder_id, device)
    if modality == "image":
        return ImageEncoder(encoder_id, device)
    raise ValueError(f"unknown modality {modality!r}")
