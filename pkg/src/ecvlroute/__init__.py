"""Scenario-aware edge/cloud routing for vision-language model pairs.

Workflow: ingest response-score records, label each query for edge
competency, train a small routing classifier on cheap features, calibrate
the decision threshold against a scenario score, then evaluate offline or
serve decisions over HTTP.
"""

__version__ = "0.1.0"

from .rsd import (
    ImageInfo,
    ModelOutcome,
    PairRecord,
    ResponseRecord,
    ScenarioConfig,
    scenario_preset,
)
from .labeling import LabelStrategy, label_proposed, label_win, parse_strategy

__all__ = [
    "__version__",
    "ImageInfo",
    "ModelOutcome",
    "PairRecord",
    "ResponseRecord",
    "ScenarioConfig",
    "scenario_preset",
    "LabelStrategy",
    "label_proposed",
    "label_win",
    "parse_strategy",
]
