"""Generator: exact stratified counts, labeled distortions, determinism."""

import io
from datetime import date

import pytest

from conftest import SEED
from ontoguard import synthgen
from ontoguard.model import TimeWindow, ValidationError, jsonl_dumps, record_to_dict
from ontoguard.oracles import binomial_interval, prevalence_recount


def simple_spec(**overrides):
    base = dict(
        institutions=(("INST-A", 0.5), ("INST-B", 0.5)),
        current_version="2025",
    )
    base.update(overrides)
    return synthgen.DistortionSpec(**base)


def serialize(records):
    return "\n".join(jsonl_dumps(record_to_dict(r)) for r in records)


class TestGenerateBatch:
    def test_zero_records(self, bundled_system):
        records, truth = synthgen.generate_batch(bundled_system, simple_spec(), 0, 1)
        assert records == []
        assert len(truth) == 0

    def test_exact_count_for_lagging_institution(self, bundled_system):
        # 6.4% weight over 50,000 records lands on exactly 3,200.
        spec = simple_spec(
            institutions=(("INST-A", 0.936), ("INST-LAG", 0.064)),
            version_mix={"INST-LAG": "2024"},
        )
        records, truth = synthgen.generate_batch(bundled_system, spec, 50_000, SEED)
        lagging = [r for r in records if r.version_tag == "2024"]
        assert len(lagging) == 3_200
        assert all(r.institution_id == "INST-LAG" for r in lagging)
        assert all(
            "version_lag" in truth.labels(r.record_id) for r in lagging
        )

    def test_rare_code_count_pinned_and_plausible(self, bundled_system):
        records, _ = synthgen.generate_batch(bundled_system, simple_spec(), 50_000, SEED)
        count = sum(1 for r in records if r.primary_code == "DM-OTHER")
        assert count == 47  # stratified exactness: 0.00094 * 50,000
        lo, hi = binomial_interval(50_000, 0.00094, 0.99)
        assert lo <= count <= hi

    def test_deterministic_byte_identical(self, bundled_system):
        spec = simple_spec(
            catch_all=(synthgen.CatchAllSpec("INST-A", "DM2-UNSPEC", 0.5),),
            ai_influence=synthgen.AIInfluenceSpec("m1", (0.1,)),
        )
        a, _ = synthgen.generate_batch(bundled_system, spec, 3_000, 123)
        b, _ = synthgen.generate_batch(bundled_system, spec, 3_000, 123)
        assert serialize(a) == serialize(b)

    def test_unknown_institution_rejected(self, bundled_system):
        spec = simple_spec(
            catch_all=(synthgen.CatchAllSpec("INST-NOPE", "DM2-UNSPEC", 0.5),),
        )
        with pytest.raises(ValidationError, match="unknown institution"):
            synthgen.generate_batch(bundled_system, spec, 10, 1)

    def test_unknown_code_rejected(self, bundled_system):
        spec = simple_spec(
            outbreak=synthgen.OutbreakSpec("BOGUS", date(2025, 1, 1), 3.0),
        )
        with pytest.raises(ValidationError, match="unknown code"):
            synthgen.generate_batch(bundled_system, spec, 10, 1)

    def test_catch_all_rewrites_carry_label_and_truth(self, bundled_system):
        spec = simple_spec(
            catch_all=(synthgen.CatchAllSpec("INST-A", "DM2-UNSPEC", 1.0),),
        )
        records, truth = synthgen.generate_batch(bundled_system, spec, 20_000, SEED)
        rewritten = [
            r for r in records
            if "catch_all" in truth.labels(r.record_id)
        ]
        assert rewritten
        for r in rewritten:
            assert r.primary_code == "DM2-UNSPEC"
            assert truth[r.record_id].true_clinical_code in {"DM2-HYPER", "DM2-COMPL"}
        # excess 1.0 at INST-A rewrites every sibling record there
        for r in records:
            if (r.institution_id == "INST-A"
                    and truth[r.record_id].true_clinical_code in {"DM2-HYPER", "DM2-COMPL"}):
                assert r.primary_code == "DM2-UNSPEC"


class TestQuarterSeries:
    def test_influence_schedule_fractions(self, bundled_system):
        spec = simple_spec(
            ai_influence=synthgen.AIInfluenceSpec("m1", (0.04, 0.08, 0.12)),
        )
        batches, _ = synthgen.generate_quarter_series(bundled_system, spec, 3, 10_000, SEED)
        for batch, expected in zip(batches, (0.04, 0.08, 0.12)):
            fraction = sum(1 for r in batch if r.influence_tag is not None) / len(batch)
            assert abs(fraction - expected) <= 0.005

    def test_all_zero_schedule_means_no_tags(self, bundled_system):
        spec = simple_spec(ai_influence=synthgen.AIInfluenceSpec("m1", (0.0, 0.0)))
        batches, truth = synthgen.generate_quarter_series(bundled_system, spec, 2, 5_000, SEED)
        for batch in batches:
            assert all(r.influence_tag is None for r in batch)
        assert all("ai_influenced" not in e.distortion_labels
                   for e in truth.entries.values())

    def test_outbreak_prevalence_ratio(self, bundled_system):
        spec = simple_spec(
            outbreak=synthgen.OutbreakSpec("RESP-FLU", date(2025, 4, 1), 3.0),
        )
        batches, _ = synthgen.generate_quarter_series(bundled_system, spec, 2, 50_000, SEED)
        p1 = prevalence_recount(batches[0], "RESP-FLU")
        p2 = prevalence_recount(batches[1], "RESP-FLU")
        assert 2.5 <= p2 / p1 <= 3.5

    def test_quarter_windows_are_consecutive(self, bundled_system):
        spec = simple_spec()
        batches, _ = synthgen.generate_quarter_series(
            bundled_system, spec, 2, 500, SEED, start=date(2025, 1, 1)
        )
        q1_days = {r.encounter_time.date() for r in batches[0]}
        q2_days = {r.encounter_time.date() for r in batches[1]}
        assert max(q1_days) <= date(2025, 3, 31)
        assert min(q2_days) >= date(2025, 4, 1)

    def test_invalid_quarter_count(self, bundled_system):
        with pytest.raises(ValidationError, match="quarters"):
            synthgen.generate_quarter_series(bundled_system, simple_spec(), 0, 10, 1)


class TestInvariants:
    def test_label_soundness(self, bundled_system):
        # Any record whose coded primary differs from clinical truth must
        # carry at least one distortion label.
        spec = simple_spec(
            catch_all=(synthgen.CatchAllSpec("INST-A", "DM2-UNSPEC", 0.7),),
            billing_inflation=(
                synthgen.BillingInflationSpec("bc-chronic-specific", date(2025, 1, 1), 1.8),
            ),
            ai_influence=synthgen.AIInfluenceSpec("m1", (0.1,)),
        )
        records, truth = synthgen.generate_batch(bundled_system, spec, 20_000, 7)
        for record in records:
            entry = truth[record.record_id]
            if record.primary_code != entry.true_clinical_code:
                assert entry.distortion_labels, record.record_id

    def test_stratified_institution_exactness(self, bundled_system):
        spec = simple_spec(institutions=(("A", 0.25), ("B", 0.25), ("C", 0.5)))
        records, _ = synthgen.generate_batch(bundled_system, spec, 10_000, 3)
        counts = {}
        for r in records:
            counts[r.institution_id] = counts.get(r.institution_id, 0) + 1
        assert counts == {"A": 2_500, "B": 2_500, "C": 5_000}

    def test_ground_truth_round_trip(self, bundled_system, tmp_path):
        spec = simple_spec(ai_influence=synthgen.AIInfluenceSpec("m1", (0.2,)))
        _, truth = synthgen.generate_batch(bundled_system, spec, 500, 5)
        path = tmp_path / "truth.jsonl"
        synthgen.write_ground_truth(path, truth)
        loaded = synthgen.read_ground_truth(path)
        assert loaded.entries == dict(truth.entries)

    def test_spec_round_trip(self, bundled_system):
        spec = simple_spec(
            catch_all=(synthgen.CatchAllSpec("INST-A", "DM2-UNSPEC", 0.8),),
            billing_inflation=(
                synthgen.BillingInflationSpec("bc-acute", date(2025, 4, 1), 2.0),
            ),
            version_mix={"INST-B": "2024"},
            ai_influence=synthgen.AIInfluenceSpec("m1", (0.04, 0.08)),
            outbreak=synthgen.OutbreakSpec("RESP-FLU", date(2025, 7, 1), 3.0),
        )
        assert synthgen.spec_from_dict(synthgen.spec_to_dict(spec)) == spec
