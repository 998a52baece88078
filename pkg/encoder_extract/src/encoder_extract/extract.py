"""Batch extraction of embeddings from a response-score dataset file."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

from ecvlroute.features import EmbeddingTable, save_embeddings
from ecvlroute.rsd import load_rsd
from ecvlroute.utils import atomic_write_text

from .encoders import build_encoder

log = logging.getLogger(__name__)


class ExtractError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractJob:
    rsd_path: str
    modality: str                 # "text" | "image"
    encoder_id: str               # model name or local checkpoint directory
    output_path: str
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if self.modality not in ("text", "image"):
            raise ExtractError(f"unknown modality {self.modality!r}")
        if self.batch_size < 1:
            raise ExtractError("batch_size must be >= 1")


@dataclass(frozen=True)
class ExtractResult:
    n_written: int
    n_skipped: int
    dim: int
    output_path: str
    report_path: str | None       # sidecar listing skipped rows, if any
    meta_path: str


def _collect_text(records):
    items, skipped = [], []
    for r in records:
        items.append((r.query_id, r.query_text))
    return items, skipped


def _collect_images(records):
    from PIL import Image

    items, skipped = [], []
    for r in records:
        if r.image is None or r.image.path is None:
            skipped.append({"query_id": r.query_id, "reason": "no image"})
            continue
        try:
            with Image.open(r.image.path) as img:
                items.append((r.query_id, img.convert("RGB")))
        except Exception as e:
            skipped.append({"query_id": r.query_id,
                            "reason": f"unreadable image: {e}"})
    return items, skipped


def extract(job: ExtractJob) -> ExtractResult:
    records = load_rsd(job.rsd_path)
    if job.modality == "text":
        items, skipped = _collect_text(records)
    else:
        items, skipped = _collect_images(records)

    report_path = None
    if skipped:
        report_path = job.output_path + ".skipped.jsonl"
        atomic_write_text(report_path, "".join(
            json.dumps(row, sort_keys=True) + "\n" for row in skipped))
        log.warning("skipped %d of %d rows; see %s",
                    len(skipped), len(records), report_path)
    if not items:
        raise ExtractError(
            f"no rows could be extracted from {job.rsd_path}")

    encoder = build_encoder(job.modality, job.encoder_id, job.device)
    rows = {}
    for start in range(0, len(items), job.batch_size):
        chunk = items[start:start + job.batch_size]
        vectors = encoder.encode([payload for _, payload in chunk])
        for (qid, _), vec in zip(chunk, vectors):
            rows[qid] = vec

    table = EmbeddingTable(job.modality, encoder.dim, rows)
    save_embeddings(table, job.output_path)

    # The binary format has no free-form header, so provenance (including
    # the pooling choice) travels in a sidecar next to the vectors.
    meta_path = job.output_path + ".meta.json"
    atomic_write_text(meta_path, json.dumps({
        "encoder_id": job.encoder_id,
        "modality": job.modality,
        "pooling": encoder.pooling,
        "dim": encoder.dim,
        "n_rows": len(rows),
        "source": os.path.basename(str(job.rsd_path)),
    }, indent=2, sort_keys=True) + "\n")

    return ExtractResult(n_written=len(rows), n_skipped=len(skipped),
                         dim=encoder.dim, output_path=str(job.output_path),
                         report_path=report_path, meta_path=meta_path)
