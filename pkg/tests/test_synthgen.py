import json

import numpy as np
import pytest

from ecvlroute.labeling import label_proposed
from ecvlroute.rsd import pair_view
from ecvlroute.synthgen import (
    CLOUD_MODEL,
    EDGE_MODEL,
    SynthError,
    SynthSpec,
    generate,
)


class TestSpec:
    def test_validation(self):
        with pytest.raises(SynthError):
            SynthSpec(n_records=0)
        with pytest.raises(SynthError):
            SynthSpec(p_flip=0.9)
        with pytest.raises(SynthError):
            SynthSpec(signal="magic")
        with pytest.raises(SynthError):
            SynthSpec(case_b_frac=1.5)

    def test_from_json(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"n_records": 12, "signal": "noisy",
                                    "edge_latency": [0.5, 0.05], "seed": 3}))
        spec = SynthSpec.from_json(path)
        assert spec.n_records == 12
        assert spec.edge_latency == (0.5, 0.05)


class TestGenerate:
    def test_deterministic(self):
        spec = SynthSpec(n_records=50, seed=21)
        r1, t1, tr1 = generate(spec)
        r2, t2, tr2 = generate(spec)
        assert r1 == r2
        assert tr1 == tr2
        for m in ("text", "image"):
            for qid in t1[m].rows:
                np.testing.assert_array_equal(t1[m].rows[qid], t2[m].rows[qid])
        r3, _, _ = generate(SynthSpec(n_records=50, seed=22))
        assert r1 != r3

    def test_truth_matches_labeling_rule(self):
        spec = SynthSpec(n_records=120, case_b_frac=0.2, seed=5)
        records, _, truth = generate(spec)
        pairs, _ = pair_view(records, EDGE_MODEL, CLOUD_MODEL)
        for p in pairs:
            assert truth[p.query_id]["label"] == label_proposed(
                p.edge.score, p.cloud.score, spec.mes)

    def test_case_b_band_present(self):
        spec = SynthSpec(n_records=300, case_b_frac=0.3, seed=1)
        records, _, truth = generate(spec)
        case_b = [q for q, t in truth.items() if t["case_b"]]
        assert 0.2 < len(case_b) / 300 < 0.4
        by_id = {r.query_id: r for r in records}
        for qid in case_b:
            rec = by_id[qid]
            assert rec.outcomes[EDGE_MODEL].score < spec.mes
            assert rec.outcomes[CLOUD_MODEL].score < spec.mes
            assert truth[qid]["label"] == 1

    def test_cloud_latency_dominates_when_flagged(self):
        records, _, _ = generate(SynthSpec(n_records=100, seed=3))
        for r in records:
            assert r.outcomes[CLOUD_MODEL].latency_s >= \
                r.outcomes[EDGE_MODEL].latency_s

    def test_scores_are_integers_in_range(self):
        records, _, _ = generate(SynthSpec(n_records=80, seed=4))
        for r in records:
            for o in r.outcomes.values():
                assert o.score == int(o.score)
                assert 1.0 <= o.score <= 10.0

    def test_linear_probe_separable(self):
        # A least-squares readout on either embedding table alone must
        # recover the label perfectly when the signal is separable.
        spec = SynthSpec(n_records=400, signal="separable", margin=1.0, seed=8)
        records, tables, truth = generate(spec)
        y = np.array([truth[r.query_id]["label"] for r in records]) * 2.0 - 1.0
        for modality in ("text", "image"):
            X = np.array([tables[modality].rows[r.query_id] for r in records],
                         dtype=np.float64)
            X = np.hstack([X, np.ones((len(X), 1))])
            w, *_ = np.linalg.lstsq(X, y, rcond=None)
            acc = float(np.mean(np.sign(X @ w) == y))
            assert acc == 1.0, modality

    def test_adversarial_embeddings_uninformative(self):
        spec = SynthSpec(n_records=400, signal="adversarial", seed=8)
        records, tables, truth = generate(spec)
        y = np.array([truth[r.query_id]["label"] for r in records]) * 2.0 - 1.0
        X = np.array([tables["text"].rows[r.query_id] for r in records],
                     dtype=np.float64)
        X = np.hstack([X, np.ones((len(X), 1))])
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        acc = float(np.mean(np.sign(X @ w) == y))
        assert acc < 0.65

    def test_noisy_flip_rate(self):
        spec = SynthSpec(n_records=1000, signal="noisy", p_flip=0.2, seed=9)
        records, tables, truth = generate(spec)
        # The planted direction predicts the pre-flip class; labels disagree
        # at roughly p_flip.
        y = np.array([truth[r.query_id]["label"] for r in records]) * 2.0 - 1.0
        X = np.array([tables["text"].rows[r.query_id] for r in records])
        X = np.hstack([X, np.ones((len(X), 1))])
        w, *_ = np.linalg.lstsq(X.astype(np.float64), y, rcond=None)
        acc = float(np.mean(np.sign(X @ w) == y))
        assert 0.7 < acc < 0.9

    def test_word_count_signal(self):
        records, _, truth = generate(SynthSpec(n_records=200, seed=2))
        short = [len(r.query_text.split()) for r in records
                 if truth[r.query_id]["label"] == 1]
        long = [len(r.query_text.split()) for r in records
                if truth[r.query_id]["label"] == 0]
        assert max(short) < min(long)

    def test_mes_must_leave_room_for_failures(self):
        with pytest.raises(SynthError, match="mes"):
            generate(SynthSpec(n_records=10, mes=1.0))
