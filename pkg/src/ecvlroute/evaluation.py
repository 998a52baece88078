"""Routing policies, scenario metrics, threshold calibration and reports.

The composite routing score is alpha*APSP + beta*CA - gamma*AIL, evaluated
here from routed decisions. Threshold calibration runs the 21-point grid
search over tau in {0.00, 0.05, ..., 1.00}, breaking ties toward the larger
tau (favoring quality).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .features import FeatureBundle
from .labeling import LabelStrategy, RoutingLabel, label_dataset
from .rsd import PairRecord, ScenarioConfig, scenario_preset
from .utils import atomic_write_text

TAU_GRID = tuple(round(0.05 * i, 2) for i in range(21))


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Policies and decisions

@dataclass(frozen=True)
class RouterPolicy:
    """Thresholded classifier policy: edge iff p >= tau."""
    state: object   # RouterState (duck-typed: .model, .tau)
    name: str = "router"


@dataclass(frozen=True)
class AllLargePolicy:
    name: str = "all-large"


@dataclass(frozen=True)
class AllSmallPolicy:
    name: str = "all-small"


@dataclass(frozen=True)
class RandomPolicy:
    p_edge: float
    seed: int = 0
    name: str = "random"

    def __post_init__(self):
        if not (0.0 <= self.p_edge <= 1.0):
            raise EvalError(f"p_edge out of [0,1]: {self.p_edge}")


Policy = RouterPolicy | AllLargePolicy | AllSmallPolicy | RandomPolicy


@dataclass(frozen=True)
class Decision:
    query_id: str
    chosen: str                   # "edge" | "cloud"
    p: float | None
    realized_score: float
    realized_latency: float


def _decide(pair: PairRecord, edge: bool, p: float | None) -> Decision:
    side = pair.edge if edge else pair.cloud
    return Decision(pair.query_id, "edge" if edge else "cloud", p,
                    side.score, side.latency_s)


def route_dataset(
    policy: Policy,
    pairs: Sequence[PairRecord],
    bundles: Sequence[FeatureBundle] | None = None,
) -> list[Decision]:
    """Apply a policy to every pair record. Router policies need one bundle
    per record (aligned by query_id); ties p == tau go to the edge."""
    if not pairs:
        raise EvalError("empty pair set")
    if isinstance(policy, RouterPolicy):
        if bundles is None:
            raise EvalError("router policy needs feature bundles")
        by_id = {b.query_id: b for b in bundles}
        missing = [p.query_id for p in pairs if p.query_id not in by_id]
        if missing:
            raise EvalError(f"missing bundles for {len(missing)} records: {missing[:5]}")
        ordered = [by_id[p.query_id] for p in pairs]
        probs = policy.state.model.predict_proba(ordered)
        tau = policy.state.tau
        return [_decide(pair, float(p) >= tau, float(p))
                for pair, p in zip(pairs, probs)]
    if isinstance(policy, AllLargePolicy):
        return [_decide(p, False, None) for p in pairs]
    if isinstance(policy, AllSmallPolicy):
        return [_decide(p, True, None) for p in pairs]
    if isinstance(policy, RandomPolicy):
        rng = np.random.default_rng(np.random.SeedSequence([policy.seed]))
        draws = rng.random(len(pairs))
        return [_decide(pair, bool(u < policy.p_edge), None)
                for pair, u in zip(pairs, draws)]
    raise EvalError(f"unknown policy {policy!r}")


# ---------------------------------------------------------------------------
# Metrics

@dataclass
class MetricsReport:
    policy: str
    apsp: float
    ca: float
    ail: float
    rcs: dict[str, float]
    acc: float | None
    pgr: float | None
    token_saving: int | None
    time_saving: float | None
    n: int


def rcs_combine(apsp: float, ca: float, ail: float,
                weights: tuple[float, float, float]) -> float:
    """Exact weighted sum; no clamping."""
    a, b, g = weights
    return a * apsp + b * ca - g * ail


def pgr(avg_quality_router: float, avg_quality_small: float,
        avg_quality_large: float) -> float | None:
    """Fraction of the small-to-large quality gap the policy recovers."""
    gap = avg_quality_large - avg_quality_small
    if gap == 0.0:
        return None
    return (avg_quality_router - avg_quality_small) / gap


def savings(decisions: Sequence[Decision],
            pairs: Sequence[PairRecord]) -> tuple[int | None, float]:
    """Cloud-minus-edge sums over the edge-routed records. Token saving is
    absent when any edge-routed record lacks token counts."""
    by_id = {p.query_id: p for p in pairs}
    token_total = 0
    token_ok = True
    time_total = 0.0
    for d in decisions:
        if d.chosen != "edge":
            continue
        pair = by_id[d.query_id]
        time_total += pair.cloud.latency_s - pair.edge.latency_s
        if pair.cloud.tokens_out is None or pair.edge.tokens_out is None:
            token_ok = False
        else:
            token_total += pair.cloud.tokens_out - pair.edge.tokens_out
    return (token_total if token_ok else None), time_total


def compute_metrics(
    decisions: Sequence[Decision],
    labels: Mapping[str, int] | None,
    mes: float,
    scenarios: Sequence[ScenarioConfig],
    pairs: Sequence[PairRecord] | None = None,
    policy_name: str = "",
) -> MetricsReport:
    if not decisions:
        raise EvalError("no decisions to score")
    n = len(decisions)
    apsp = sum(1 for d in decisions if d.realized_score >= mes) / n
    ca = sum(1 for d in decisions if d.chosen == "edge") / n
    ail = sum(d.realized_latency for d in decisions) / n
    rcs = {s.name: rcs_combine(apsp, ca, ail, (s.alpha, s.beta, s.gamma))
           for s in scenarios}
    acc = None
    if labels is not None:
        aligned = [(d, labels[d.query_id]) for d in decisions if d.query_id in labels]
        if len(aligned) != n:
            raise EvalError("labels do not cover all decisions")
        acc = sum(1 for d, y in aligned if (d.chosen == "edge") == (y == 1)) / n
    pgr_val = None
    token_saving = time_saving = None
    if pairs is not None:
        by_id = {p.query_id: p for p in pairs}
        q_router = sum(d.realized_score for d in decisions) / n
        q_small = sum(by_id[d.query_id].edge.score for d in decisions) / n
        q_large = sum(by_id[d.query_id].cloud.score for d in decisions) / n
        pgr_val = pgr(q_router, q_small, q_large)
        token_saving, time_saving = savings(decisions, pairs)
    return MetricsReport(policy=policy_name, apsp=apsp, ca=ca, ail=ail, rcs=rcs,
                         acc=acc, pgr=pgr_val, token_saving=token_saving,
                         time_saving=time_saving, n=n)


# ---------------------------------------------------------------------------
# Threshold calibration

def grid_search_tau(
    p_values: Sequence[float],
    pairs: Sequence[PairRecord],
    scenario: ScenarioConfig,
    grid: Sequence[float] = TAU_GRID,
) -> tuple[float, float]:
    """Maximize RCS over the threshold grid; ties go to the larger tau."""
    if len(pairs) == 0:
        raise EvalError("empty validation set")
    if len(p_values) != len(pairs):
        raise EvalError("p values do not align with pairs")
    p = np.asarray(p_values, dtype=np.float64)
    edge_score = np.array([x.edge.score for x in pairs])
    cloud_score = np.array([x.cloud.score for x in pairs])
    edge_lat = np.array([x.edge.latency_s for x in pairs])
    cloud_lat = np.array([x.cloud.latency_s for x in pairs])
    weights = (scenario.alpha, scenario.beta, scenario.gamma)
    best = None
    for tau in grid:
        edge = p >= tau
        score = np.where(edge, edge_score, cloud_score)
        lat = np.where(edge, edge_lat, cloud_lat)
        apsp = float(np.mean(score >= scenario.mes))
        ca = float(np.mean(edge))
        ail = float(np.mean(lat))
        rcs = rcs_combine(apsp, ca, ail, weights)
        if best is None or rcs >= best[1]:
            best = (tau, rcs)
    return best


# ---------------------------------------------------------------------------
# Sweeps and ablations

@dataclass(frozen=True)
class SweepRow:
    mes: float
    failure_rate: float
    ca: float
    apsp: float
    tau_star: float
    rcs_star: float


def failure_rate(pairs: Sequence[PairRecord], mes: float) -> float:
    """Fraction of records where neither model reaches the MES floor."""
    return sum(1 for p in pairs
               if max(p.edge.score, p.cloud.score) < mes) / len(pairs)


def mes_sweep(
    pairs: Sequence[PairRecord],
    mes_values: Sequence[float],
    policy_builder: Callable[[Sequence[PairRecord], Sequence[RoutingLabel], float],
                             tuple[Policy, Sequence[FeatureBundle] | None, float, float]],
) -> list[SweepRow]:
    """Relabel, rebuild and rescore a policy at each MES.

    policy_builder(pairs, labels, mes) returns (policy, bundles, tau*, rcs*).
    """
    for mes in mes_values:
        if not (1.0 <= mes <= 10.0):
            raise EvalError(f"mes out of range: {mes}")
    rows = []
    for mes in mes_values:
        labels = label_dataset(pairs, LabelStrategy("proposed", mes=mes))
        policy, bundles, tau_star, rcs_star = policy_builder(pairs, labels, mes)
        decisions = route_dataset(policy, pairs, bundles)
        n = len(decisions)
        rows.append(SweepRow(
            mes=mes,
            failure_rate=failure_rate(pairs, mes),
            ca=sum(1 for d in decisions if d.chosen == "edge") / n,
            apsp=sum(1 for d in decisions if d.realized_score >= mes) / n,
            tau_star=tau_star,
            rcs_star=rcs_star,
        ))
    return rows


def ablation_run(
    split_pairs: Mapping[str, Sequence[PairRecord]],
    split_bundles_for_mask: Callable[[str, tuple[int, int, int]], Sequence[FeatureBundle]],
    labels: Mapping[str, int],
    masks: Sequence[tuple[int, int, int]],
    variant,
    train_config,
    scenario: ScenarioConfig,
    random_seed: int = 0,
    k_dims: tuple[int, int] = (1, 1),
) -> list[MetricsReport]:
    """Train one router per modality mask (identical seed/config) and score it
    on the test split next to the Random / All-at-Large / All-at-Small rows."""
    from .nn.train import train  # deferred: nn.train imports this module

    if not masks:
        raise EvalError("no masks given")
    scenarios = [scenario_preset(n, scenario.mes) for n in ("rcs1", "rcs2", "rcs3")]
    test_pairs = split_pairs["test"]
    reports = []
    for mask in masks:
        train_b = split_bundles_for_mask("train", mask)
        valid_b = split_bundles_for_mask("valid", mask)
        test_b = split_bundles_for_mask("test", mask)
        y = [labels[b.query_id] for b in train_b]
        state = train(variant, train_b, y, valid_b, split_pairs["valid"],
                      train_config, scenario, *k_dims, mask=mask)
        decisions = route_dataset(RouterPolicy(state), test_pairs, test_b)
        name = "router:" + "".join(str(b) for b in mask)
        reports.append(compute_metrics(decisions, labels, scenario.mes, scenarios,
                                       pairs=test_pairs, policy_name=name))
    for policy in (RandomPolicy(p_edge=0.5, seed=random_seed), AllLargePolicy(),
                   AllSmallPolicy()):
        decisions = route_dataset(policy, test_pairs)
        reports.append(compute_metrics(decisions, labels, scenario.mes, scenarios,
                                       pairs=test_pairs, policy_name=policy.name))
    return reports


# ---------------------------------------------------------------------------
# Report emission

REPORT_COLUMNS = ("policy", "apsp", "ca", "ail_s", "rcs1", "rcs2", "rcs3",
                  "acc", "pgr", "token_saving", "time_saving", "n")


def _report_row(r: MetricsReport) -> dict:
    def ratio(x):
        return None if x is None else round(x, 4)

    return {
        "policy": r.policy,
        "apsp": ratio(r.apsp),
        "ca": ratio(r.ca),
        "ail_s": ratio(r.ail),
        "rcs1": ratio(r.rcs.get("rcs1")),
        "rcs2": ratio(r.rcs.get("rcs2")),
        "rcs3": ratio(r.rcs.get("rcs3")),
        "acc": ratio(r.acc),
        "pgr": ratio(r.pgr),
        "token_saving": r.token_saving,
        "time_saving": ratio(r.time_saving),
        "n": r.n,
    }


def _fmt_cell(key: str, value) -> str:
    if value is None:
        return ""
    if key in ("policy",):
        return str(value)
    if key in ("n", "token_saving"):
        return str(int(value))
    return f"{value:.4f}"


def emit_report(reports: Sequence[MetricsReport], path, format: str = "csv"):
    """Write the fixed-column report; CSV and JSON carry identical values."""
    if not reports:
        raise EvalError("no reports to emit")
    rows = [_report_row(r) for r in reports]
    if format == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in rows:
            lines.append(",".join(_fmt_cell(c, row[c]) for c in REPORT_COLUMNS))
        atomic_write_text(path, "\n".join(lines) + "\n")
    elif format == "json":
        atomic_write_text(path, json.dumps(rows, indent=2, sort_keys=True) + "\n")
    else:
        raise EvalError(f"unknown report format {format!r}")


def emit_sweep(rows: Sequence[SweepRow], path):
    lines = ["mes,failure_rate,ca,apsp,tau_star,rcs_star"]
    for r in rows:
        lines.append(f"{r.mes:g},{r.failure_rate:.4f},{r.ca:.4f},{r.apsp:.4f},"
                     f"{r.tau_star:.2f},{r.rcs_star:.4f}")
    atomic_write_text(path, "\n".join(lines) + "\n")
