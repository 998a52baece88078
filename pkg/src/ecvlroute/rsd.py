"""Response-score dataset records: parsing, pair views, and stratified splits.

One JSONL record per benchmark query, with an ``outcomes`` map keyed by model
name so any edge/cloud pair can be derived from a single file.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")


class RsdError(ValueError):
    """A record or dataset violated the RSD schema or an invariant."""


@dataclass(frozen=True)
class ModelOutcome:
    model_name: str
    score: float          # quality score in [1, 10]
    latency_s: float      # end-to-end seconds
    tokens_out: int | None = None

    def __post_init__(self):
        if not self.model_name:
            raise RsdError("model_name must be non-empty")
        if not (1.0 <= self.score <= 10.0):
            raise RsdError(f"score out of range [1,10]: {self.score!r} for {self.model_name}")
        if self.latency_s < 0:
            raise RsdError(f"negative latency: {self.latency_s!r} for {self.model_name}")
        if self.tokens_out is not None and self.tokens_out < 0:
            raise RsdError(f"negative tokens_out for {self.model_name}")


@dataclass(frozen=True)
class ImageInfo:
    width: int
    height: int
    channels: int
    path: str | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.channels not in (1, 3, 4):
            raise RsdError(
                f"invalid image metadata: {self.width}x{self.height}x{self.channels}"
            )


@dataclass(frozen=True)
class ResponseRecord:
    query_id: str
    source_dataset: str
    query_text: str
    outcomes: Mapping[str, ModelOutcome]
    input_text: str = ""
    image: ImageInfo | None = None


@dataclass(frozen=True)
class PairRecord:
    """One record restricted to a specific edge/cloud model pair."""
    record: ResponseRecord
    edge: ModelOutcome
    cloud: ModelOutcome

    def __post_init__(self):
        if self.edge.model_name == self.cloud.model_name:
            raise RsdError("pair must be distinct")

    @property
    def query_id(self) -> str:
        return self.record.query_id


@dataclass(frozen=True)
class ScenarioConfig:
    """MES floor plus the RCS weights encoding one user scenario."""
    name: str
    mes: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not (1.0 <= self.mes <= 10.0):
            raise RsdError(f"mes out of range [1,10]: {self.mes}")
        for w in (self.alpha, self.beta, self.gamma):
            if not math.isfinite(w) or w < 0:
                raise RsdError(f"scenario weights must be finite and >= 0, got {w}")


# The three published weight presets: Quality, Efficiency, Speed.
SCENARIO_PRESETS = {
    "rcs1": (1.2, 0.1, 0.001),
    "rcs2": (1.0, 0.12, 0.001),
    "rcs3": (1.0, 0.1, 0.0015),
}


def scenario_preset(name: str, mes: float = 6.0) -> ScenarioConfig:
    try:
        a, b, g = SCENARIO_PRESETS[name]
    except KeyError:
        raise RsdError(f"unknown scenario preset {name!r}; choose from {sorted(SCENARIO_PRESETS)}")
    return ScenarioConfig(name=name, mes=mes, alpha=a, beta=b, gamma=g)


@dataclass(frozen=True)
class SplitAssignment:
    assignment: Mapping[str, str]   # query_id -> train|valid|test
    ratios: tuple[float, float, float]
    seed: int

    def ids(self, split: str) -> list[str]:
        return [qid for qid, s in self.assignment.items() if s == split]


# ---------------------------------------------------------------------------
# Parsing / serialization

def _require(obj: dict, key: str, qid: str | None):
    if key not in obj:
        where = f" (query_id {qid})" if qid else ""
        raise RsdError(f"missing field {key}{where}")
    return obj[key]


def parse_record(line: str) -> ResponseRecord:
    """Parse one JSONL line into a validated ResponseRecord.

    Out-of-range scores are rejected, never clamped: a silently clamped score
    would corrupt labels near the MES boundary.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise RsdError(f"malformed JSON: {e}") from e
    if not isinstance(obj, dict):
        raise RsdError("record must be a JSON object")
    qid = obj.get("query_id")
    if not isinstance(qid, str) or not qid:
        raise RsdError("missing field query_id")
    source = _require(obj, "source_dataset", qid)
    query_text = _require(obj, "query_text", qid)
    raw_outcomes = _require(obj, "outcomes", qid)
    if not isinstance(raw_outcomes, dict):
        raise RsdError(f"outcomes must be an object (query_id {qid})")
    outcomes = {}
    for name, o in raw_outcomes.items():
        if not isinstance(o, dict):
            raise RsdError(f"outcome for {name} must be an object (query_id {qid})")
        try:
            outcomes[name] = ModelOutcome(
                model_name=name,
                score=float(_require(o, "score", qid)),
                latency_s=float(_require(o, "latency_s", qid)),
                tokens_out=int(o["tokens_out"]) if "tokens_out" in o else None,
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, RsdError):
                raise RsdError(f"{e} (query_id {qid})") from None
            raise RsdError(f"bad outcome for {name} (query_id {qid}): {e}") from e
    image = None
    if "image" in obj and obj["image"] is not None:
        im = obj["image"]
        try:
            image = ImageInfo(
                width=int(_require(im, "width", qid)),
                height=int(_require(im, "height", qid)),
                channels=int(_require(im, "channels", qid)),
                path=im.get("path"),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, RsdError):
                raise RsdError(f"{e} (query_id {qid})") from None
            raise RsdError(f"bad image metadata (query_id {qid}): {e}") from e
    return ResponseRecord(
        query_id=qid,
        source_dataset=str(source),
        query_text=str(query_text),
        input_text=str(obj.get("input_text", "")),
        image=image,
        outcomes=outcomes,
    )


def serialize_record(rec: ResponseRecord) -> str:
    obj: dict = {
        "query_id": rec.query_id,
        "source_dataset": rec.source_dataset,
        "query_text": rec.query_text,
        "outcomes": {
            name: {
                "score": o.score,
                "latency_s": o.latency_s,
                **({"tokens_out": o.tokens_out} if o.tokens_out is not None else {}),
            }
            for name, o in sorted(rec.outcomes.items())
        },
    }
    if rec.input_text:
        obj["input_text"] = rec.input_text
    if rec.image is not None:
        im = {"width": rec.image.width, "height": rec.image.height,
              "channels": rec.image.channels}
        if rec.image.path is not None:
            im["path"] = rec.image.path
        obj["image"] = im
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def load_rsd(path) -> list[ResponseRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_record(line)
            except RsdError as e:
                raise RsdError(f"{path}:{lineno}: {e}") from None
            if rec.query_id in seen:
                raise RsdError(f"{path}:{lineno}: duplicate query_id {rec.query_id!r}")
            seen.add(rec.query_id)
            records.append(rec)
    return records


def save_rsd(records: Iterable[ResponseRecord], path):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(serialize_record(rec) + "\n")


# ---------------------------------------------------------------------------
# Pair views

def pair_view(
    records: Sequence[ResponseRecord], edge_name: str, cloud_name: str
) -> tuple[list[PairRecord], int]:
    """Restrict a dataset to records carrying both models of a pair.

    Returns the matching PairRecords plus the count of skipped records
    (those missing either outcome).
    """
    if edge_name == cloud_name:
        raise RsdError("pair must be distinct")
    pairs = []
    skipped = 0
    for rec in records:
        edge = rec.outcomes.get(edge_name)
        cloud = rec.outcomes.get(cloud_name)
        if edge is None or cloud is None:
            skipped += 1
            continue
        pairs.append(PairRecord(record=rec, edge=edge, cloud=cloud))
    if not pairs:
        raise RsdError(
            f"no matching records for pair edge={edge_name!r} cloud={cloud_name!r}"
        )
    return pairs, skipped


# ---------------------------------------------------------------------------
# Stratified splitting

def _stratum_rng(seed: int, source: str, label: int) -> np.random.Generator:
    # Per-stratum stream derived from (seed, sha256 of the stratum key) so the
    # permutation depends on the 64-bit seed only, not on dict ordering.
    digest = hashlib.sha256(f"{source}\x00{label}".encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, key]))


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [n * r for r in ratios]
    base = [int(math.floor(x)) for x in exact]
    short = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def stratified_split(
    pairs: Sequence[PairRecord],
    labels: Mapping[str, int],
    ratios: tuple[float, float, float],
    seed: int,
) -> SplitAssignment:
    """Assign each record to train/valid/test, stratified by (source, label).

    Within every stratum the realized split sizes match the requested ratios
    to within one record (largest-remainder allocation), and the permutation
    is a pure function of the seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise RsdError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise RsdError(f"ratios must be non-negative, got {ratios}")
    missing = [p.query_id for p in pairs if p.query_id not in labels]
    if missing:
        raise RsdError(f"labels missing for {len(missing)} records, e.g. {missing[:3]}")

    strata: dict[tuple[str, int], list[str]] = {}
    for p in pairs:
        key = (p.record.source_dataset, int(labels[p.query_id]))
        strata.setdefault(key, []).append(p.query_id)

    assignment: dict[str, str] = {}
    for (source, label), qids in sorted(strata.items()):
        qids = sorted(qids)
        rng = _stratum_rng(seed, source, label)
        perm = rng.permutation(len(qids))
        shuffled = [qids[i] for i in perm]
        sizes = _largest_remainder(len(qids), ratios)
        pos = 0
        for split, size in zip(SPLITS, sizes):
            for qid in shuffled[pos:pos + size]:
                assignment[qid] = split
            pos += size
    return SplitAssignment(assignment=assignment, ratios=tuple(ratios), seed=seed)


def save_split(split: SplitAssignment, path):
    with open(path, "w", encoding="utf-8") as f:
        for qid in sorted(split.assignment):
            f.write(json.dumps({"query_id": qid, "split": split.assignment[qid]}) + "\n")


def load_split(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("split") not in SPLITS:
                raise RsdError(f"{path}:{lineno}: bad split value {obj.get('split')!r}")
            out[obj["query_id"]] = obj["split"]
    return out
