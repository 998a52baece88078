"""Deterministic synthetic dataset generator plus brute-force oracles.

Desk-scale stand-in for a real response-score dataset: integer quality scores
from a planted difficulty signal, label-correlated directions in both
embedding modalities, and a word-count signal in the text statistics, so a
working router can recover the label from any single modality.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .features import EmbeddingTable
from .rsd import ImageInfo, ModelOutcome, PairRecord, ResponseRecord, ScenarioConfig

EDGE_MODEL = "edge-sim"
CLOUD_MODEL = "cloud-sim"

_VOCAB = ("route", "query", "image", "chart", "answer", "detail", "scene",
          "object", "count", "color", "text", "region", "table", "value")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_records: int = 200
    k_text: int = 16
    k_image: int = 16
    signal: str = "separable"        # separable | noisy | adversarial
    margin: float = 1.0              # separable: min projection gap between classes
    p_flip: float = 0.1              # noisy: probability the scores contradict the signal
    mes: float = 6.0                 # score floor the planted labels are built around
    case_b_frac: float = 0.0         # fraction of records where both models fail MES
    cloud_ge_edge_latency: bool = True
    edge_latency: tuple[float, float] = (0.9, 0.1)    # mean, std
    cloud_latency: tuple[float, float] = (4.5, 1.0)
    with_tokens: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 1 or self.k_text < 1 or self.k_image < 1:
            raise SynthError("n_records and dims must be >= 1")
        if not (0.0 <= self.p_flip <= 0.5):
            raise SynthError("p_flip must be in [0, 0.5]")
        if self.signal not in ("separable", "noisy", "adversarial"):
            raise SynthError(f"unknown signal kind {self.signal!r}")
        if not (0.0 <= self.case_b_frac <= 1.0):
            raise SynthError("case_b_frac must be in [0, 1]")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        for key in ("edge_latency", "cloud_latency"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


def _planted_vector(rng, k, direction, side, margin):
    noise = rng.normal(0.0, 0.5, k)
    noise -= (noise @ direction) * direction
    s = side * (0.5 * margin + rng.uniform(0.0, 0.5))
    return (noise + s * direction).astype(np.float32)


def _query_text(rng, y: int) -> str:
    # Short queries for edge-competent records, long ones otherwise: the
    # word-count statistic alone separates the classes.
    n_words = int(rng.integers(3, 9)) if y == 1 else int(rng.integers(20, 31))
    words = [str(_VOCAB[i]) for i in rng.integers(0, len(_VOCAB), n_words)]
    if rng.random() < 0.3:
        words.append(str(rng.integers(0, 100)))
    if rng.random() < 0.3:
        words.append("why?")
    return " ".join(words)


def generate(spec: SynthSpec):
    """Returns (records, {"text": table, "image": table}, truth).

    truth maps query_id -> {"label", "case_b", "difficulty"}; labels follow
    the MES competency rule applied to the generated scores (for the
    separable signal they coincide with the planted class).
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed]))
    mes_lo = int(spec.mes)           # scores < mes live in [1, mes_lo - 1]
    if mes_lo < 2 or mes_lo > 9:
        raise SynthError("integer score model needs mes in [2, 9]")

    u_text = rng.normal(0.0, 1.0, spec.k_text)
    u_text /= np.linalg.norm(u_text)
    u_image = rng.normal(0.0, 1.0, spec.k_image)
    u_image /= np.linalg.norm(u_image)

    records = []
    text_rows = {}
    image_rows = {}
    truth = {}
    for i in range(spec.n_records):
        qid = f"q{i:06d}"
        source = "synth-a" if i % 2 == 0 else "synth-b"
        y = int(rng.integers(0, 2))
        case_b = bool(rng.random() < spec.case_b_frac)
        difficulty = float(rng.uniform(0.0, 1.0))

        score_y = y
        if spec.signal == "noisy" and rng.random() < spec.p_flip:
            score_y = 1 - y
        if spec.signal == "adversarial":
            score_y = int(rng.integers(0, 2))

        if case_b:
            # Both models below the floor: the competency rule still says edge.
            edge_score = int(rng.integers(1, mes_lo))
            cloud_score = int(rng.integers(1, mes_lo))
            label = 1
        elif score_y == 1:
            edge_score = int(rng.integers(mes_lo, 11))
            cloud_score = int(rng.integers(mes_lo, 11))
            label = 1
        else:
            edge_score = int(rng.integers(1, mes_lo))
            cloud_score = int(rng.integers(mes_lo, 11))
            label = 0

        edge_lat = max(0.05, float(rng.normal(*spec.edge_latency)))
        if spec.cloud_ge_edge_latency:
            cloud_lat = edge_lat + abs(float(rng.normal(
                spec.cloud_latency[0] - spec.edge_latency[0], spec.cloud_latency[1])))
        else:
            cloud_lat = max(0.05, float(rng.normal(*spec.cloud_latency)))

        outcomes = {
            EDGE_MODEL: ModelOutcome(
                EDGE_MODEL, float(edge_score), edge_lat,
                int(rng.integers(20, 80)) if spec.with_tokens else None),
            CLOUD_MODEL: ModelOutcome(
                CLOUD_MODEL, float(cloud_score), cloud_lat,
                int(rng.integers(80, 200)) if spec.with_tokens else None),
        }
        if spec.signal == "separable":
            plant = label
        elif spec.signal == "noisy":
            plant = 1 if case_b else y       # pre-flip class: labels are noisy wrt features
        else:
            plant = int(rng.integers(0, 2))  # adversarial: features carry no label signal
        records.append(ResponseRecord(
            query_id=qid,
            source_dataset=source,
            query_text=_query_text(rng, plant),
            outcomes=outcomes,
            image=ImageInfo(width=int(rng.integers(320, 1280)),
                            height=int(rng.integers(240, 1024)), channels=3),
        ))
        side = 1.0 if plant == 1 else -1.0
        text_rows[qid] = _planted_vector(rng, spec.k_text, u_text, side, spec.margin)
        image_rows[qid] = _planted_vector(rng, spec.k_image, u_image, side, spec.margin)
        truth[qid] = {"label": label, "case_b": case_b, "difficulty": difficulty}

    tables = {
        "text": EmbeddingTable("text", spec.k_text, text_rows),
        "image": EmbeddingTable("image", spec.k_image, image_rows),
    }
    return records, tables, truth


def oracle_best_tau(
    p_values: Sequence[float],
    pairs: Sequence[PairRecord],
    scenario: ScenarioConfig,
    grid: Sequence[float],
) -> tuple[float, float]:
    """Exhaustive threshold search, written independently of the evaluation
    module (plain loops, no shared helpers) so the two can cross-check."""
    if len(grid) < 1:
        raise SynthError("grid must be non-empty")
    if len(p_values) != len(pairs):
        raise SynthError("p values and pairs differ in length")
    n = len(pairs)
    best_tau = None
    best_rcs = None
    for tau in grid:
        meets = 0
        edge_count = 0
        latency_total = 0.0
        for p, pair in zip(p_values, pairs):
            if p >= tau:
                edge_count += 1
                score = pair.edge.score
                latency_total += pair.edge.latency_s
            else:
                score = pair.cloud.score
                latency_total += pair.cloud.latency_s
            if score >= scenario.mes:
                meets += 1
        rcs = (scenario.alpha * (meets / n)
               + scenario.beta * (edge_count / n)
               - scenario.gamma * (latency_total / n))
        if best_rcs is None or rcs >= best_rcs:
            best_tau, best_rcs = tau, rcs
    return best_tau, best_rcs
