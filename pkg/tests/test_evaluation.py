import csv
import json

import numpy as np
import pytest

from ecvlroute.evaluation import (
    AllLargePolicy,
    AllSmallPolicy,
    EvalError,
    RandomPolicy,
    RouterPolicy,
    TAU_GRID,
    compute_metrics,
    emit_report,
    emit_sweep,
    failure_rate,
    grid_search_tau,
    mes_sweep,
    pgr,
    rcs_combine,
    route_dataset,
    savings,
)
from ecvlroute.rsd import scenario_preset
from ecvlroute.synthgen import SynthSpec, generate, oracle_best_tau
from synthworld import SynthWorld


def test_tau_grid_is_21_points():
    assert len(TAU_GRID) == 21
    assert TAU_GRID[0] == 0.0 and TAU_GRID[-1] == 1.0
    steps = {round(b - a, 2) for a, b in zip(TAU_GRID, TAU_GRID[1:])}
    assert steps == {0.05}


class TestRcsCombine:
    def test_exact(self):
        assert rcs_combine(0.5, 0.8, 4.0, (1.2, 0.1, 0.001)) == \
            pytest.approx(1.2 * 0.5 + 0.1 * 0.8 - 0.001 * 4.0, abs=1e-15)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a1, c1, l1 = rng.random(3)
            a2, c2, l2 = rng.random(3)
            w = tuple(rng.random(3))
            lhs = rcs_combine(a1 + a2, c1 + c2, l1 + l2, w)
            rhs = rcs_combine(a1, c1, l1, w) + rcs_combine(a2, c2, l2, w)
            assert lhs == pytest.approx(rhs, abs=1e-12)


class TestPolicies:
    def test_all_small_all_large_identities(self, small_world):
        pairs = small_world.pairs
        scens = [scenario_preset(n) for n in ("rcs1", "rcs2", "rcs3")]
        small = compute_metrics(route_dataset(AllSmallPolicy(), pairs), None,
                                6.0, scens, pairs=pairs, policy_name="all-small")
        large = compute_metrics(route_dataset(AllLargePolicy(), pairs), None,
                                6.0, scens, pairs=pairs, policy_name="all-large")
        assert small.ca == 1.0
        assert large.ca == 0.0
        assert small.ail <= large.ail   # generator enforces cloud >= edge latency
        assert large.pgr == pytest.approx(1.0)
        assert small.pgr == pytest.approx(0.0)
        assert large.token_saving == 0 and large.time_saving == 0.0

    def test_random_policy_deterministic_per_seed(self, small_world):
        pairs = small_world.pairs
        a = route_dataset(RandomPolicy(0.5, seed=3), pairs)
        b = route_dataset(RandomPolicy(0.5, seed=3), pairs)
        assert a == b
        c = route_dataset(RandomPolicy(0.5, seed=4), pairs)
        assert a != c

    def test_random_extremes(self, small_world):
        pairs = small_world.pairs
        assert all(d.chosen == "edge"
                   for d in route_dataset(RandomPolicy(1.0), pairs))
        assert all(d.chosen == "cloud"
                   for d in route_dataset(RandomPolicy(0.0), pairs))

    def test_router_tie_goes_to_edge(self, small_world):
        pairs, bundles = small_world.by_split["train"]

        class Fixed:
            def predict_proba(self, ordered):
                return np.full(len(ordered), 0.6)

        class State:
            model = Fixed()
            tau = 0.6

        decisions = route_dataset(RouterPolicy(State()), pairs, bundles)
        assert all(d.chosen == "edge" for d in decisions)

    def test_router_requires_bundles(self, small_world):
        with pytest.raises(EvalError, match="bundles"):
            route_dataset(RouterPolicy(object()), small_world.pairs)

    def test_missing_bundles_listed(self, small_world):
        pairs, bundles = small_world.by_split["test"]

        class State:
            model = None
            tau = 0.5

        with pytest.raises(EvalError, match="missing bundles"):
            route_dataset(RouterPolicy(State()), pairs, bundles[:-2])


class TestMetrics:
    def test_hand_computed_case(self, small_world):
        pairs = small_world.pairs[:10]
        decisions = route_dataset(AllSmallPolicy(), pairs)
        scens = [scenario_preset("rcs1")]
        m = compute_metrics(decisions, None, 6.0, scens, pairs=pairs,
                            policy_name="x")
        expect_apsp = sum(1 for p in pairs if p.edge.score >= 6.0) / 10
        expect_ail = sum(p.edge.latency_s for p in pairs) / 10
        assert m.apsp == pytest.approx(expect_apsp)
        assert m.ail == pytest.approx(expect_ail)
        assert m.rcs["rcs1"] == pytest.approx(
            1.2 * expect_apsp + 0.1 * 1.0 - 0.001 * expect_ail)

    def test_acc_against_labels(self, small_world):
        pairs = small_world.pairs
        labels = small_world.labels
        decisions = route_dataset(AllSmallPolicy(), pairs)
        m = compute_metrics(decisions, labels, 6.0,
                            [scenario_preset("rcs1")], policy_name="x")
        assert m.acc == pytest.approx(sum(labels.values()) / len(labels))

    def test_labels_must_cover(self, small_world):
        pairs = small_world.pairs
        decisions = route_dataset(AllSmallPolicy(), pairs)
        partial = dict(list(small_world.labels.items())[:5])
        with pytest.raises(EvalError, match="cover"):
            compute_metrics(decisions, partial, 6.0, [scenario_preset("rcs1")])

    def test_token_saving_none_when_tokens_missing(self):
        spec = SynthSpec(n_records=30, with_tokens=False, seed=2)
        world_records, _, _ = generate(spec)
        from ecvlroute.rsd import pair_view
        from ecvlroute.synthgen import CLOUD_MODEL, EDGE_MODEL
        pairs, _ = pair_view(world_records, EDGE_MODEL, CLOUD_MODEL)
        decisions = route_dataset(AllSmallPolicy(), pairs)
        token, time_s = savings(decisions, pairs)
        assert token is None
        assert time_s > 0.0

    def test_pgr_none_on_zero_gap(self):
        assert pgr(5.0, 4.0, 4.0) is None
        assert pgr(4.5, 4.0, 5.0) == pytest.approx(0.5)


class TestGridSearch:
    def test_matches_oracle_on_random_fixtures(self, small_world):
        pairs = small_world.pairs
        rng = np.random.default_rng(9)
        scen = scenario_preset("rcs2")
        for _ in range(10):
            p = rng.random(len(pairs))
            got = grid_search_tau(p, pairs, scen)
            want = oracle_best_tau(p, pairs, scen, TAU_GRID)
            assert got == want

    def test_ties_break_to_larger_tau(self, small_world):
        pairs = small_world.pairs
        # p == 0 everywhere: every tau > 0 routes all to cloud, identical RCS.
        tau, _ = grid_search_tau(np.zeros(len(pairs)), pairs,
                                 scenario_preset("rcs1"))
        assert tau == 1.0

    def test_alignment_checked(self, small_world):
        with pytest.raises(EvalError, match="align"):
            grid_search_tau([0.5], small_world.pairs, scenario_preset("rcs1"))

    def test_empty_rejected(self):
        with pytest.raises(EvalError, match="empty"):
            grid_search_tau([], [], scenario_preset("rcs1"))


class TestSweep:
    def test_failure_rate_bounds(self, small_world):
        pairs = small_world.pairs
        assert failure_rate(pairs, 1.0) == 0.0
        assert failure_rate(pairs, 10.0) <= 1.0

    def test_failure_rate_monotone(self, small_world):
        pairs = small_world.pairs
        rates = [failure_rate(pairs, m) for m in (1, 2, 4, 6, 8, 10)]
        assert rates == sorted(rates)

    def test_mes_sweep_rows(self, small_world):
        pairs = small_world.pairs

        def builder(_pairs, labels, mes):
            return AllSmallPolicy(), None, 0.0, 0.0

        rows = mes_sweep(pairs, [2.0, 6.0, 9.0], builder)
        assert [r.mes for r in rows] == [2.0, 6.0, 9.0]
        assert all(r.ca == 1.0 for r in rows)
        fr = [r.failure_rate for r in rows]
        assert fr == sorted(fr)

    def test_mes_out_of_range(self, small_world):
        with pytest.raises(EvalError, match="mes out of range"):
            mes_sweep(small_world.pairs, [0.5], lambda *a: None)


class TestReports:
    def _reports(self, world):
        pairs = world.pairs
        scens = [scenario_preset(n) for n in ("rcs1", "rcs2", "rcs3")]
        return [
            compute_metrics(route_dataset(pol, pairs), world.labels, 6.0,
                            scens, pairs=pairs, policy_name=pol.name)
            for pol in (AllSmallPolicy(), AllLargePolicy())
        ]

    def test_csv_json_identical_values(self, small_world, tmp_path):
        reports = self._reports(small_world)
        cpath = tmp_path / "r.csv"
        jpath = tmp_path / "r.json"
        emit_report(reports, cpath, "csv")
        emit_report(reports, jpath, "json")
        with open(cpath) as f:
            crows = list(csv.DictReader(f))
        jrows = json.loads(jpath.read_text())
        assert len(crows) == len(jrows) == 2
        for c, j in zip(crows, jrows):
            for key, jval in j.items():
                cval = c[key]
                if jval is None:
                    assert cval == ""
                elif isinstance(jval, str):
                    assert cval == jval
                else:
                    assert float(cval) == pytest.approx(jval)

    def test_csv_columns_fixed(self, small_world, tmp_path):
        path = tmp_path / "r.csv"
        emit_report(self._reports(small_world), path, "csv")
        header = path.read_text().splitlines()[0]
        assert header == ("policy,apsp,ca,ail_s,rcs1,rcs2,rcs3,acc,pgr,"
                          "token_saving,time_saving,n")

    def test_sweep_emission(self, small_world, tmp_path):
        def builder(_pairs, labels, mes):
            return AllSmallPolicy(), None, 0.35, 0.5

        rows = mes_sweep(small_world.pairs, [5.0, 6.0], builder)
        path = tmp_path / "s.csv"
        emit_sweep(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "mes,failure_rate,ca,apsp,tau_star,rcs_star"
        assert len(lines) == 3

    def test_unknown_format(self, small_world, tmp_path):
        with pytest.raises(EvalError, match="format"):
            emit_report(self._reports(small_world), tmp_path / "x", "yaml")
