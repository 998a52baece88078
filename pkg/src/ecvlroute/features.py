"""Per-query feature assembly.

A FeatureBundle carries the text embedding, the image embedding, a 7-slot
statistics vector and a per-modality mask. Embeddings are produced externally
and loaded from files; statistics are computed here from the raw record. The
statistics layout is fixed as
[word_count, special_char_count, numeric_token_count, char_count,
 width, height, channels].
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rsd import ImageInfo, ResponseRecord

log = logging.getLogger(__name__)

EMB_MAGIC = b"ECVLEMB1"
MODALITY_BYTES = {"text": 0, "image": 1}
STATS_DIM = 7


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class TextStats:
    word_count: int
    special_char_count: int
    numeric_token_count: int
    char_count: int


def _is_numeric_token(tok: str) -> bool:
    # All digits, optionally with a single decimal point somewhere inside.
    if tok.count(".") > 1:
        return False
    digits = tok.replace(".", "", 1)
    return bool(digits) and digits.isdigit()


def text_stats(text: str) -> TextStats:
    """Total over any Unicode input; empty text yields all zeros.

    Words are maximal whitespace-separated tokens; special characters are
    those neither alphanumeric nor whitespace.
    """
    tokens = text.split()
    return TextStats(
        word_count=len(tokens),
        special_char_count=sum(1 for c in text if not c.isalnum() and not c.isspace()),
        numeric_token_count=sum(1 for t in tokens if _is_numeric_token(t)),
        char_count=len(text),
    )


@dataclass(frozen=True)
class ImageStats:
    width: int
    height: int
    channels: int
    present: int

    def __post_init__(self):
        if self.present == 0 and (self.width or self.height or self.channels):
            raise FeatureError("absent image must have zero dimensions")


def image_stats(meta: ImageInfo | None = None, path: str | None = None) -> ImageStats:
    """Dimensions from metadata, or read from a PNG/JPEG header when only a
    path is given. Text-only queries get the all-zero, present=0 stats."""
    if meta is not None:
        return ImageStats(meta.width, meta.height, meta.channels, 1)
    if path is None:
        return ImageStats(0, 0, 0, 0)
    try:
        from PIL import Image
        with Image.open(path) as im:
            channels = len(im.getbands())
        return ImageStats(im.width, im.height, channels, 1)
    except Exception as e:
        raise FeatureError(f"unreadable image {path!r}: {e}") from e


# ---------------------------------------------------------------------------
# Embedding tables

@dataclass(frozen=True)
class EmbeddingTable:
    modality: str                      # "text" | "image"
    dim: int
    rows: Mapping[str, np.ndarray]     # query_id -> float32 vector of length dim


def save_embeddings(table: EmbeddingTable, path):
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<B", MODALITY_BYTES[table.modality]))
        f.write(struct.pack("<IQ", table.dim, len(table.rows)))
        for qid in sorted(table.rows):
            vec = np.asarray(table.rows[qid], dtype="<f4")
            ident = qid.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(vec.tobytes())


def _load_embeddings_jsonl(path, modality: str) -> EmbeddingTable:
    rows: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            qid = obj["query_id"]
            vec = np.asarray(obj["vector"], dtype=np.float32)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise FeatureError(
                    f"{path}:{lineno}: dimension mismatch {vec.shape[0]} != {dim}"
                )
            if qid in rows:
                raise FeatureError(f"{path}:{lineno}: duplicate query_id {qid!r}")
            if not np.all(np.isfinite(vec)):
                raise FeatureError(f"{path}:{lineno}: non-finite value for {qid!r}")
            rows[qid] = vec
    if dim is None:
        raise FeatureError(f"{path}: empty embedding file")
    return EmbeddingTable(modality=modality, dim=int(dim), rows=rows)


def load_embeddings(path, modality: str = "text") -> EmbeddingTable:
    """Load the binary embedding format; JSONL rows are accepted as a
    fallback when the file starts with "{". The modality argument only
    applies to the JSONL fallback (the binary header carries its own)."""
    with open(path, "rb") as f:
        head = f.read(len(EMB_MAGIC))
        if head.startswith(b"{"):
            return _load_embeddings_jsonl(path, modality)
        if head != EMB_MAGIC:
            raise FeatureError(f"{path}: bad magic {head!r}")
        (mod_byte,) = struct.unpack("<B", f.read(1))
        mod = {v: k for k, v in MODALITY_BYTES.items()}.get(mod_byte)
        if mod is None:
            raise FeatureError(f"{path}: unknown modality byte {mod_byte}")
        dim, count = struct.unpack("<IQ", f.read(12))
        rows: dict[str, np.ndarray] = {}
        for _ in range(count):
            (idlen,) = struct.unpack("<H", f.read(2))
            qid = f.read(idlen).decode("utf-8")
            raw = f.read(4 * dim)
            if len(raw) != 4 * dim:
                raise FeatureError(f"{path}: truncated row for {qid!r}")
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float32)
            if qid in rows:
                raise FeatureError(f"{path}: duplicate query_id {qid!r}")
            if not np.all(np.isfinite(vec)):
                raise FeatureError(f"{path}: non-finite value for {qid!r}")
            rows[qid] = vec
    return EmbeddingTable(modality=mod, dim=int(dim), rows=rows)


# ---------------------------------------------------------------------------
# Statistics normalization

@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray   # zero-variance dims already replaced by 1

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_normalizer(stats_rows: Sequence[np.ndarray]) -> Normalizer:
    """Per-dimension mean/std over the raw train-split stats (population std)."""
    if len(stats_rows) < 2:
        raise FeatureError("need at least 2 records to fit a normalizer")
    mat = np.asarray(stats_rows, dtype=np.float64)
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return Normalizer(mean=mean, std=std)


def raw_stats(record: ResponseRecord) -> np.ndarray:
    """The 7-slot raw statistics vector for a record.

    Text statistics run over query_text + input_text concatenated."""
    text = record.query_text if not record.input_text else record.query_text + " " + record.input_text
    ts = text_stats(text)
    if record.image is not None:
        ims = image_stats(meta=record.image)
    elif record.image is None:
        ims = ImageStats(0, 0, 0, 0)
    return np.array(
        [ts.word_count, ts.special_char_count, ts.numeric_token_count, ts.char_count,
         ims.width, ims.height, ims.channels],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class FeatureBundle:
    query_id: str
    e_text: np.ndarray | None
    e_image: np.ndarray | None
    stats: np.ndarray               # standardized, length 7
    mask: tuple[int, int, int]      # (text, image, stats)


class FeatureAssembler:
    """Builds FeatureBundles from records plus loaded embedding tables.

    A missing embedding under an active mask bit degrades to mask 0 (the
    classifier sees a zero vector) instead of failing; the miss is counted so
    callers can report the degradation rate.
    """

    def __init__(
        self,
        text_table: EmbeddingTable | None,
        image_table: EmbeddingTable | None,
        normalizer: Normalizer,
        mask: tuple[int, int, int] = (1, 1, 1),
    ):
        self.text_table = text_table
        self.image_table = image_table
        self.normalizer = normalizer
        self.mask = mask
        self.missing_text = 0
        self.missing_image = 0

    def assemble(self, record: ResponseRecord) -> FeatureBundle:
        m_text, m_image, m_stats = self.mask
        e_text = e_image = None
        if m_text:
            if self.text_table is not None and record.query_id in self.text_table.rows:
                e_text = self.text_table.rows[record.query_id]
            else:
                m_text = 0
                self.missing_text += 1
        if m_image:
            row = None
            if self.image_table is not None:
                row = self.image_table.rows.get(record.query_id)
            if row is not None and record.image is not None:
                e_image = row
            else:
                m_image = 0
                if record.image is not None:
                    self.missing_image += 1
        stats = self.normalizer.transform(raw_stats(record))
        return FeatureBundle(
            query_id=record.query_id,
            e_text=e_text,
            e_image=e_image,
            stats=stats,
            mask=(m_text, m_image, m_stats),
        )

    def assemble_all(self, records: Iterable[ResponseRecord]) -> list[FeatureBundle]:
        bundles = [self.assemble(r) for r in records]
        if self.missing_text or self.missing_image:
            log.warning("missing embeddings: text=%d image=%d (degraded to zero vectors)",
                        self.missing_text, self.missing_image)
        return bundles
