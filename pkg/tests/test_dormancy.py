"""Dormancy: classification, persisted store, activation triggers."""

from datetime import date, datetime

import pytest

from conftest import make_record
from ontoguard import synthgen
from ontoguard.dormancy import (
    ActivationCondition,
    ActivationKind,
    DormantStore,
    Event,
    FeatureClass,
    check_activation,
    classify_features,
    read_store,
    store_dormant,
    write_prune_log,
    write_store,
)
from ontoguard.model import Layer, PipelineConfig, ValidationError
from ontoguard.sentinel import DriftType, scan

CFG = PipelineConfig()  # dormancy threshold 0.002

PREVALENCE_HALF_PERCENT = ActivationCondition(
    kind=ActivationKind.PREVALENCE_EXCEEDS, threshold=0.005
)
ENDO_TRANSFER = ActivationCondition(
    kind=ActivationKind.DOMAIN_TRANSFER_REQUEST, domain="endocrinology"
)


def batch_with_counts(counts: dict[str, int]) -> list:
    records = []
    i = 0
    for code, count in counts.items():
        for _ in range(count):
            records.append(make_record(f"R-{i:06d}", code=code))
            i += 1
    return records


class TestClassifyFeatures:
    def test_rare_significant_code_goes_dormant(self, q1_products, bundled_cfg):
        classes = classify_features(
            q1_products["inferred"], {"DM-OTHER"}, bundled_cfg, Layer.ADMINISTRATIVE
        )
        assert classes["DM-OTHER"] is FeatureClass.DORMANT

    def test_common_code_is_active(self):
        batch = batch_with_counts({"AAA": 1_000, "BBB": 9_000})
        classes = classify_features(batch, set(), CFG, Layer.ADMINISTRATIVE)
        assert classes["AAA"] is FeatureClass.ACTIVE

    def test_rare_unlisted_code_is_pruned(self):
        batch = batch_with_counts({"AAA": 9_999, "RARE": 1})
        classes = classify_features(batch, set(), CFG, Layer.ADMINISTRATIVE)
        assert classes["RARE"] is FeatureClass.PRUNED

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError, match="empty batch"):
            classify_features([], set(), CFG, Layer.ADMINISTRATIVE)

    def test_no_silent_loss(self, q1_products, bundled_cfg):
        batch = q1_products["inferred"]
        classes = classify_features(batch, {"DM-OTHER"}, bundled_cfg,
                                    Layer.ADMINISTRATIVE)
        assert set(classes) == {r.primary_code for r in batch}

    def test_clinical_layer_selector(self):
        batch = [
            make_record(f"R-{i}", code="AAA", clinical_code="BBB")
            for i in range(100)
        ]
        admin = classify_features(batch, set(), CFG, Layer.ADMINISTRATIVE)
        clinical = classify_features(batch, set(), CFG, Layer.CLINICAL)
        assert set(admin) == {"AAA"}
        assert set(clinical) == {"BBB"}


class TestStoreDormant:
    def test_walkthrough_entry_has_both_conditions(self, q1_products, bundled_cfg,
                                                   tmp_path):
        batch = q1_products["inferred"]
        classes = classify_features(batch, {"DM-OTHER"}, bundled_cfg,
                                    Layer.ADMINISTRATIVE)
        store = store_dormant(
            classes, batch,
            {"DM-OTHER": (PREVALENCE_HALF_PERCENT, ENDO_TRANSFER)},
            Layer.ADMINISTRATIVE,
            notes_by_code={"DM-OTHER": "rare diabetes subtype"},
            path=tmp_path / "store.json",
        )
        entry = store.entries["DM-OTHER"]
        assert entry.count == 47
        assert len(entry.activation_conditions) == 2
        assert entry.significance_note == "rare diabetes subtype"
        assert entry.top_co_codes

    def test_no_dormant_codes_empty_store_with_prune_log(self, tmp_path):
        batch = batch_with_counts({"AAA": 9_999, "RARE": 1})
        classes = classify_features(batch, set(), CFG, Layer.ADMINISTRATIVE)
        store = store_dormant(classes, batch, {}, Layer.ADMINISTRATIVE,
                              path=tmp_path / "store.json")
        assert store.entries == {}
        assert [e.code for e in store.prune_log] == ["RARE"]
        write_prune_log(store, tmp_path / "prune.csv")
        lines = (tmp_path / "prune.csv").read_text().splitlines()
        assert lines[0] == "code,count,last_observed"
        assert lines[1].startswith("RARE,1,")

    def test_restore_is_idempotent(self, tmp_path):
        batch = batch_with_counts({"AAA": 9_999, "RARE": 1})
        classes = classify_features(batch, {"RARE"}, CFG, Layer.ADMINISTRATIVE)
        conditions = {"RARE": (PREVALENCE_HALF_PERCENT,)}
        store = store_dormant(classes, batch, conditions, Layer.ADMINISTRATIVE,
                              path=tmp_path / "store.json")
        store = store_dormant(classes, batch, conditions, Layer.ADMINISTRATIVE,
                              store=store)
        assert len(store.entries) == 1
        assert store.entries["RARE"].count == 1

    def test_dormant_code_without_condition_rejected(self):
        batch = batch_with_counts({"AAA": 9_999, "RARE": 1})
        classes = classify_features(batch, {"RARE"}, CFG, Layer.ADMINISTRATIVE)
        with pytest.raises(ValidationError, match="no configured activation condition"):
            store_dormant(classes, batch, {}, Layer.ADMINISTRATIVE)

    def test_store_file_round_trip(self, tmp_path):
        batch = batch_with_counts({"AAA": 9_999, "RARE": 1})
        classes = classify_features(batch, {"RARE"}, CFG, Layer.ADMINISTRATIVE)
        store = store_dormant(
            classes, batch, {"RARE": (PREVALENCE_HALF_PERCENT, ENDO_TRANSFER)},
            Layer.ADMINISTRATIVE, path=tmp_path / "store.json",
        )
        loaded = read_store(tmp_path / "store.json")
        assert loaded.entries["RARE"].activation_conditions \
            == store.entries["RARE"].activation_conditions
        assert loaded.entries["RARE"].last_observed \
            == store.entries["RARE"].last_observed


class TestCheckActivation:
    def make_store(self, conditions) -> DormantStore:
        batch = batch_with_counts({"AAA": 999, "RARE": 1})
        classes = classify_features(batch, {"RARE"}, CFG, Layer.ADMINISTRATIVE)
        return store_dormant(classes, batch, {"RARE": conditions},
                             Layer.ADMINISTRATIVE)

    def test_prevalence_above_threshold_activates(self):
        store = self.make_store((PREVALENCE_HALF_PERCENT,))
        quarterly = batch_with_counts({"RARE": 6, "AAA": 994})  # 0.6%
        activations = check_activation(store, quarterly, [], Layer.ADMINISTRATIVE)
        assert activations == [("RARE", PREVALENCE_HALF_PERCENT)]

    def test_prevalence_at_threshold_does_not_activate(self):
        store = self.make_store((PREVALENCE_HALF_PERCENT,))
        quarterly = batch_with_counts({"RARE": 5, "AAA": 995})  # exactly 0.5%
        assert check_activation(store, quarterly, [], Layer.ADMINISTRATIVE) == []

    def test_no_events_no_activation(self):
        store = self.make_store((PREVALENCE_HALF_PERCENT, ENDO_TRANSFER))
        quarterly = batch_with_counts({"AAA": 1_000})
        assert check_activation(store, quarterly, [], Layer.ADMINISTRATIVE) == []

    def test_domain_transfer_event_activates(self):
        store = self.make_store((ENDO_TRANSFER,))
        quarterly = batch_with_counts({"AAA": 1_000})
        events = [Event(kind=ActivationKind.DOMAIN_TRANSFER_REQUEST,
                        domain="endocrinology")]
        activations = check_activation(store, quarterly, events, Layer.ADMINISTRATIVE)
        assert activations == [("RARE", ENDO_TRANSFER)]

    def test_activation_monotone_in_code_records(self):
        store = self.make_store((PREVALENCE_HALF_PERCENT,))
        quarterly = batch_with_counts({"RARE": 6, "AAA": 994})
        assert check_activation(store, quarterly, [], Layer.ADMINISTRATIVE)
        more = quarterly + batch_with_counts({"RARE": 50})
        assert check_activation(store, more, [], Layer.ADMINISTRATIVE)

    def test_outbreak_signal_from_drift_alert_end_to_end(self, bundled_system):
        # An outbreak-injected series raises an epidemiological alert whose
        # code matches a stored activation condition.
        spec = synthgen.DistortionSpec(
            institutions=(("I-A", 0.5), ("I-B", 0.5)),
            current_version="2025",
            outbreak=synthgen.OutbreakSpec("RESP-FLU", date(2025, 4, 1), 3.0),
        )
        batches, _ = synthgen.generate_quarter_series(bundled_system, spec, 2, 20_000, 11)
        # Sensitivity study configuration: weight the population-facing
        # components, where epidemiological drift shows up.
        cfg = PipelineConfig(
            drift_threshold=0.03,
            fingerprint_min_support=100,
            drift_component_weights=(0.05, 0.55, 0.35, 0.05),
        )
        alerts = scan(
            batches[0], batches[1], bundled_system,
            bundled_system.release_calendar(), cfg, Layer.ADMINISTRATIVE,
            baseline_window=synthgen.quarter_window(date(2025, 1, 1), 0),
            current_window=synthgen.quarter_window(date(2025, 1, 1), 1),
        )
        type_a_codes = {a.code for a in alerts if a.drift_type is DriftType.TYPE_A}
        assert "RESP-FLU" in type_a_codes

        condition = ActivationCondition(
            kind=ActivationKind.OUTBREAK_SIGNAL, signal_code="RESP-FLU"
        )
        store = self.make_store((condition,))
        events = [
            Event(kind=ActivationKind.OUTBREAK_SIGNAL, signal_code=a.code)
            for a in alerts if a.drift_type is DriftType.TYPE_A
        ]
        activations = check_activation(
            store, batch_with_counts({"AAA": 100}), events, Layer.ADMINISTRATIVE
        )
        assert activations == [("RARE", condition)]


def test_condition_validation():
    with pytest.raises(ValidationError, match="threshold"):
        ActivationCondition(kind=ActivationKind.PREVALENCE_EXCEEDS, threshold=1.5)
    with pytest.raises(ValidationError, match="domain"):
        ActivationCondition(kind=ActivationKind.DOMAIN_TRANSFER_REQUEST)
    with pytest.raises(ValidationError, match="code"):
        ActivationCondition(kind=ActivationKind.OUTBREAK_SIGNAL)
