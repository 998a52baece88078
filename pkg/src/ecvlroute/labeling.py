"""Edge-competency labeling rules.

The proposed rule marks the edge model competent when it reaches the minimum
of the cloud score and the MES floor, or when even the cloud model fails MES
(there is nothing to gain from escalating). The win-hard / win-soft rules are
the plain score-comparison alternatives, optionally offsetting the edge score
by +k.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .rsd import PairRecord, RsdError

log = logging.getLogger(__name__)

_STRATEGY_RE = re.compile(r"^(proposed:mes=(?P<mes>[\d.]+)|win-hard|win-soft:k=(?P<k>[\d.]+))$")


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelStrategy:
    kind: str                 # "proposed" | "win-hard" | "win-soft"
    mes: float | None = None  # proposed only
    k: float | None = None    # win-soft only

    def __post_init__(self):
        if self.kind == "proposed":
            if self.mes is None or not (1.0 <= self.mes <= 10.0):
                raise LabelError(f"proposed strategy needs mes in [1,10], got {self.mes}")
        elif self.kind == "win-hard":
            pass
        elif self.kind == "win-soft":
            if self.k is None or self.k <= 0:
                raise LabelError(f"win-soft strategy needs k > 0, got {self.k}")
        else:
            raise LabelError(f"unknown strategy kind {self.kind!r}")

    def descriptor(self) -> str:
        if self.kind == "proposed":
            return f"proposed:mes={self.mes:g}"
        if self.kind == "win-soft":
            return f"win-soft:k={self.k:g}"
        return "win-hard"

    def apply(self, score_edge: float, score_cloud: float) -> int:
        if self.kind == "proposed":
            return label_proposed(score_edge, score_cloud, self.mes)
        if self.kind == "win-soft":
            return label_win(score_edge, score_cloud, self.k)
        return label_win(score_edge, score_cloud, 0.0)


def parse_strategy(text: str) -> LabelStrategy:
    """Parse a descriptor like "proposed:mes=6", "win-hard" or "win-soft:k=1"."""
    m = _STRATEGY_RE.match(text.strip())
    if not m:
        raise LabelError(f"unrecognized strategy descriptor {text!r}")
    if text.startswith("proposed"):
        return LabelStrategy("proposed", mes=float(m.group("mes")))
    if text.startswith("win-soft"):
        return LabelStrategy("win-soft", k=float(m.group("k")))
    return LabelStrategy("win-hard")


@dataclass(frozen=True)
class RoutingLabel:
    query_id: str
    label: int
    strategy: str  # descriptor snapshot, e.g. "proposed:mes=6"


def _check_score(name: str, value: float):
    if not (1.0 <= value <= 10.0):
        raise LabelError(f"{name} out of range [1,10]: {value!r}")


def label_proposed(score_edge: float, score_cloud: float, mes: float) -> int:
    """1 iff the edge score reaches min(cloud, MES), or the cloud fails MES.

    Ties resolve to edge-competent (>= on the first clause, strict < on the
    second), with no epsilon.
    """
    _check_score("score_edge", score_edge)
    _check_score("score_cloud", score_cloud)
    _check_score("mes", mes)
    return int(score_edge >= min(score_cloud, mes) or score_cloud < mes)


def label_win(score_edge: float, score_cloud: float, k: float = 0.0) -> int:
    """1 iff score_edge + k >= score_cloud. k = 0 is the win-hard rule."""
    _check_score("score_edge", score_edge)
    _check_score("score_cloud", score_cloud)
    if k < 0:
        raise LabelError(f"k must be >= 0, got {k}")
    return int(score_edge + k >= score_cloud)


def label_dataset(pairs: Sequence[PairRecord], strategy: LabelStrategy) -> list[RoutingLabel]:
    """Label every pair record; warns (never fails) on degenerate label sets."""
    if not pairs:
        raise LabelError("cannot label an empty pair set")
    desc = strategy.descriptor()
    labels = [
        RoutingLabel(p.query_id, strategy.apply(p.edge.score, p.cloud.score), desc)
        for p in pairs
    ]
    rate = sum(l.label for l in labels) / len(labels)
    if rate in (0.0, 1.0):
        log.warning("degenerate label set under %s: positive rate %.0f%%", desc, rate * 100)
    else:
        log.info("labeled %d records under %s, positive rate %.3f", len(labels), desc, rate)
    return labels


def positive_rate(labels: Sequence[RoutingLabel]) -> float:
    return sum(l.label for l in labels) / len(labels)


def save_labels(labels: Iterable[RoutingLabel], path):
    with open(path, "w", encoding="utf-8") as f:
        for l in labels:
            f.write(json.dumps({"query_id": l.query_id, "label": l.label,
                                "strategy": l.strategy}) + "\n")


def load_labels(path) -> list[RoutingLabel]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("label") not in (0, 1):
                raise RsdError(f"{path}:{lineno}: label must be 0 or 1")
            out.append(RoutingLabel(obj["query_id"], obj["label"], obj.get("strategy", "")))
    return out
