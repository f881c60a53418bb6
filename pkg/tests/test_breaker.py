"""Circuit breaker: ratio tracking, state machine, gated retraining."""

from datetime import date

import numpy as np
import pytest

from conftest import make_record
from ontoguard import synthgen
from ontoguard.breaker import (
    BreakerStateKind,
    InfluenceStats,
    ModelSuggestion,
    Refusal,
    ToyRiskModel,
    compute_stats,
    evaluate,
    read_history,
    retrain_gate,
    suggest,
    tag_outputs,
    write_influence_csv,
    write_refusal_packet,
)
from ontoguard.model import InfluenceTag, PipelineConfig, ValidationError
from ontoguard.oracles import binomial_interval

CFG = PipelineConfig()  # breaker threshold 0.15


def tagged(record_id, modified=False):
    return make_record(record_id, influence_tag=InfluenceTag("m1", 0.8, modified))


def cohort_with_ratio(n, ratio):
    k = int(round(n * ratio))
    return [tagged(f"T-{i}") for i in range(k)] \
        + [make_record(f"U-{i}") for i in range(n - k)]


def stats_for(ratio, history=()):
    cohort = cohort_with_ratio(1_000, ratio)
    return compute_stats(cohort, history)


class TestComputeStats:
    def test_twelve_percent_cohort(self):
        stats = compute_stats(cohort_with_ratio(50_000, 0.12), [])
        assert stats.ratio == pytest.approx(0.12)
        assert stats.tagged_count == 6_000
        assert stats.total_count == 50_000

    def test_zero_tags_closed(self):
        stats = compute_stats([make_record(f"R-{i}") for i in range(100)], [])
        assert stats.ratio == 0.0
        assert evaluate(stats, CFG).state is BreakerStateKind.CLOSED

    def test_empty_cohort(self):
        stats = compute_stats([], [])
        assert stats.ratio == 0.0
        assert stats.total_count == 0

    def test_history_appended_in_order(self):
        stats = compute_stats(
            cohort_with_ratio(100, 0.1),
            [("p1", 0.02), ("p2", 0.05)],
            period="p3",
        )
        assert stats.history == (("p1", 0.02), ("p2", 0.05), ("p3", 0.1))


class TestEvaluate:
    def test_rising_history_below_threshold_warns(self):
        stats = stats_for(0.12, [("q1", 0.04), ("q2", 0.08)])
        state = evaluate(stats, CFG)
        assert state.state is BreakerStateKind.WARNING
        assert "next cycle" in state.reason

    def test_above_threshold_opens(self):
        state = evaluate(stats_for(0.16), CFG)
        assert state.state is BreakerStateKind.OPEN

    def test_flat_history_stays_closed(self):
        stats = stats_for(0.12, [("q1", 0.12), ("q2", 0.12)])
        assert evaluate(stats, CFG).state is BreakerStateKind.CLOSED

    def test_exactly_at_threshold_not_open(self):
        state = evaluate(stats_for(0.15), CFG)
        assert state.state is not BreakerStateKind.OPEN

    def test_just_above_threshold_opens(self):
        stats = InfluenceStats("c", 0.150001, 150, 1_000, (("p1", 0.150001),))
        assert evaluate(stats, CFG).state is BreakerStateKind.OPEN


class TestRetrainGate:
    def test_closed_state_retrains_with_version_bump(self):
        model = ToyRiskModel("toy-risk-1", {}, "c0")
        cohort = cohort_with_ratio(100, 0.0)
        state = evaluate(compute_stats(cohort, []), CFG)
        new = retrain_gate(state, cohort, model)
        assert isinstance(new, ToyRiskModel)
        assert new.version_number() == 2

    def test_open_state_refuses_and_keeps_model(self):
        model = ToyRiskModel("toy-risk-1", {"AAA": 0.5}, "c0")
        cohort = cohort_with_ratio(100, 0.2)
        stats = compute_stats(cohort, [])
        state = evaluate(stats, CFG)
        result = retrain_gate(state, cohort, model, stats)
        assert isinstance(result, Refusal)
        assert result.stats.ratio == pytest.approx(0.2)
        assert model.model_version == "toy-risk-1"

    def test_empty_cohort_with_closed_state_rejected(self):
        model = ToyRiskModel("toy-risk-1", {}, "c0")
        state = evaluate(compute_stats(cohort_with_ratio(10, 0.0), []), CFG)
        with pytest.raises(ValidationError, match="empty cohort"):
            retrain_gate(state, [], model)

    def test_four_cycle_loop_refuses_on_schedule_breach(self, bundled_system):
        # Quarterly influence 4 -> 8 -> 12 -> 18 percent: cycles 1-2 retrain
        # quietly, cycle 3 warns, cycle 4 opens and refuses.
        spec = synthgen.DistortionSpec(
            institutions=(("I-A", 0.5), ("I-B", 0.5)),
            current_version="2025",
            ai_influence=synthgen.AIInfluenceSpec("m1", (0.04, 0.08, 0.12, 0.18)),
        )
        batches, _ = synthgen.generate_quarter_series(bundled_system, spec, 4, 5_000, 3)
        model = ToyRiskModel("toy-risk-1", {}, "c0")
        history: tuple = ()
        outcomes = []
        for i, batch in enumerate(batches):
            stats = compute_stats(batch, history, period=f"q{i + 1}")
            history = stats.history
            state = evaluate(stats, CFG)
            result = retrain_gate(state, batch, model, stats)
            outcomes.append((state.state, isinstance(result, Refusal)))
            if isinstance(result, ToyRiskModel):
                model = result
        assert [s for s, _ in outcomes] == [
            BreakerStateKind.CLOSED, BreakerStateKind.CLOSED,
            BreakerStateKind.WARNING, BreakerStateKind.OPEN,
        ]
        assert [r for _, r in outcomes] == [False, False, False, True]
        assert model.version_number() == 4  # three successful retrains


class TestTagOutputs:
    def suggestions(self, n):
        return [
            ModelSuggestion(make_record(f"R-{i}"), "SCREEN-DM", 0.9)
            for i in range(n)
        ]

    def test_zero_acceptance_tags_nothing(self):
        assert tag_outputs(self.suggestions(100), "m2", 0.0, 0.25, seed=1) == []

    def test_modification_fraction_within_binomial_bounds(self):
        tagged_records = tag_outputs(self.suggestions(1_000), "m2", 1.0, 0.25, seed=5)
        assert len(tagged_records) == 1_000
        modified = sum(1 for r in tagged_records if r.influence_tag.clinician_modified)
        assert abs(modified / 1_000 - 0.25) <= 0.02
        lo, hi = binomial_interval(1_000, 0.25, 0.99)
        assert lo <= modified <= hi

    def test_model_version_propagates(self):
        tagged_records = tag_outputs(self.suggestions(50), "m7", 1.0, 0.0, seed=2)
        assert all(r.influence_tag.model_version == "m7" for r in tagged_records)
        assert all(r.primary_code == "SCREEN-DM" for r in tagged_records)

    def test_suggest_returns_top_fraction(self):
        model = ToyRiskModel("toy-risk-2", {"DM2-HYPER": 1.0}, "c1")
        batch = [make_record(f"R-{i}", code="DM2-HYPER") for i in range(5)] \
            + [make_record(f"S-{i}", code="WELL-EXAM") for i in range(95)]
        picks = suggest(model, batch, "SCREEN-DM", top_fraction=0.05)
        assert len(picks) == 5
        assert all(p.source_record.primary_code == "DM2-HYPER" for p in picks)


class TestProperties:
    def test_gate_soundness_over_random_states(self):
        # No retraining ever happens while the breaker is open.
        rng = np.random.default_rng(37)
        model = ToyRiskModel("toy-risk-1", {}, "c0")
        for _ in range(1_000):
            ratio = float(rng.random())
            history = tuple(
                (f"p{i}", float(rng.random())) for i in range(int(rng.integers(0, 5)))
            )
            stats = InfluenceStats("c", ratio, int(ratio * 100), 100,
                                   history + (("now", ratio),))
            state = evaluate(stats, CFG)
            result = retrain_gate(state, cohort_with_ratio(10, 0.0), model, stats)
            if state.state is BreakerStateKind.OPEN:
                assert isinstance(result, Refusal)
            else:
                assert isinstance(result, ToyRiskModel)

    def test_ratio_monotone_in_tagged_records(self):
        cohort = cohort_with_ratio(200, 0.1)
        base = compute_stats(cohort, []).ratio
        grown = compute_stats(cohort + [tagged("X-1"), tagged("X-2")], []).ratio
        assert grown >= base


class TestIO:
    def test_history_parsing(self):
        assert read_history("0.04,0.08") == [("period-1", 0.04), ("period-2", 0.08)]
        assert read_history('[["q1", 0.1]]') == [("q1", 0.1)]
        assert read_history("") == []

    def test_dashboard_export(self, tmp_path):
        stats = stats_for(0.12, [("q1", 0.04)])
        state = evaluate(stats, CFG)
        write_influence_csv([("q2", stats, state)], tmp_path / "dash.csv")
        lines = (tmp_path / "dash.csv").read_text().splitlines()
        assert lines[0] == "period,cohort,ratio,state"
        assert lines[1].startswith("q2,cohort,0.12")

    def test_refusal_packet(self, tmp_path):
        stats = stats_for(0.2)
        state = evaluate(stats, CFG)
        result = retrain_gate(state, [], ToyRiskModel("toy-risk-1", {}, "c0"), stats)
        write_refusal_packet(result, tmp_path / "refusal.json")
        import json

        payload = json.loads((tmp_path / "refusal.json").read_text())
        assert payload["state"] == "open"
        assert payload["stats"]["ratio"] == pytest.approx(0.2)
