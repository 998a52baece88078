"""Shared synthetic-dataset harness for the test suite."""
import numpy as np

from ecvlroute.features import FeatureAssembler, fit_normalizer, raw_stats
from ecvlroute.labeling import LabelStrategy, label_dataset
from ecvlroute.rsd import pair_view, stratified_split
from ecvlroute.synthgen import CLOUD_MODEL, EDGE_MODEL, SynthSpec, generate


class SynthWorld:
    """One generated dataset with labels, split and per-split feature bundles."""

    def __init__(self, spec: SynthSpec, split_seed: int = 0):
        self.spec = spec
        self.records, self.tables, self.truth = generate(spec)
        self.pairs, _ = pair_view(self.records, EDGE_MODEL, CLOUD_MODEL)
        self.labels = {
            l.query_id: l.label
            for l in label_dataset(self.pairs, LabelStrategy("proposed", mes=spec.mes))
        }
        self.split = stratified_split(self.pairs, self.labels,
                                      (0.6, 0.2, 0.2), seed=split_seed)
        train_rows = [raw_stats(p.record) for p in self.pairs
                      if self.split.assignment[p.query_id] == "train"]
        self.normalizer = fit_normalizer(train_rows)
        self.by_split = {}
        for name in ("train", "valid", "test"):
            subset = [p for p in self.pairs
                      if self.split.assignment[p.query_id] == name]
            asm = FeatureAssembler(self.tables["text"], self.tables["image"],
                                   self.normalizer)
            self.by_split[name] = (subset, asm.assemble_all(p.record for p in subset))

    def split_labels(self, name):
        subset, _ = self.by_split[name]
        return [self.labels[p.query_id] for p in subset]


