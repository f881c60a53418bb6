"""Version gate: partition semantics, reconciliation, migration validation."""

import numpy as np
import pytest

from conftest import make_record, tiny_system
from ontoguard.model import PipelineConfig, ValidationError
from ontoguard.oracles import partition_oracle
from ontoguard.version_gate import (
    MigrationVerdict,
    QuarantineReason,
    changed_codes,
    gate_batch,
    read_quarantine,
    validate_migration,
    write_quarantine,
)

CFG = PipelineConfig()


def migration_system():
    """Three versions: v0 unvalidated, v1 -> v2 table with a rename, an
    unmappable code, and an ambiguous one-to-many mapping."""
    codes_v0 = [
        {"code": "OLD", "clinical_group": "g", "billing_category": "b",
         "description": ""},
    ]
    shared = [
        {"code": c, "clinical_group": "g", "billing_category": "b", "description": ""}
        for c in ("KEEP", "RENAME-1", "GONE", "SPLIT")
    ]
    codes_v2 = [
        {"code": c, "clinical_group": "g", "billing_category": "b", "description": ""}
        for c in ("KEEP", "RENAME-2", "SPLIT-A", "SPLIT-B")
    ]
    return tiny_system(
        versions=[
            {"label": "v0", "release_date": "2023-01-01", "validated": False},
            {"label": "v1", "release_date": "2024-01-01", "validated": True},
            {"label": "v2", "release_date": "2025-01-01", "validated": True},
        ],
        codes={"v0": codes_v0, "v1": shared, "v2": codes_v2},
        transitions=[{
            "from": "v1", "to": "v2",
            "mappings": [
                {"from_code": "KEEP", "to_code": "KEEP"},
                {"from_code": "RENAME-1", "to_code": "RENAME-2"},
                {"from_code": "SPLIT", "to_code": "SPLIT-A"},
                {"from_code": "SPLIT", "to_code": "SPLIT-B"},
            ],
            "unmappable": ["GONE"],
        }],
    )


class TestGateBatch:
    def test_walkthrough_counts(self, q1_products):
        outcome = q1_products["outcome"]
        assert len(outcome.accepted) == 46_800
        assert len(outcome.reconciled) == 3_200
        assert len(outcome.quarantined) == 0

    def test_batch_already_on_target_is_identity(self):
        system = migration_system()
        batch = [make_record(f"R-{i}", code="KEEP", version="v2") for i in range(5)]
        outcome = gate_batch(batch, system, "v2", CFG)
        assert list(outcome.accepted) == batch
        assert outcome.reconciled == ()
        assert outcome.quarantined == ()

    def test_unmappable_code_quarantined(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="GONE", version="v1")], system, "v2", CFG
        )
        assert outcome.quarantined[0].reason is QuarantineReason.UNMAPPABLE_CODE

    def test_one_to_many_treated_as_unmappable(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="SPLIT", version="v1")], system, "v2", CFG
        )
        assert outcome.quarantined[0].reason is QuarantineReason.UNMAPPABLE_CODE

    def test_rename_reconciled_with_audit_fields(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="RENAME-1", version="v1")], system, "v2", CFG
        )
        item = outcome.reconciled[0]
        assert item.record.primary_code == "RENAME-2"
        assert item.record.version_tag == "v2"
        assert item.original_code == "RENAME-1"
        assert item.original_version == "v1"

    def test_unknown_code_quarantined(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="BOGUS", version="v1")], system, "v2", CFG
        )
        assert outcome.quarantined[0].reason is QuarantineReason.UNKNOWN_CODE

    def test_unvalidated_source_version_quarantined(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="OLD", version="v0")], system, "v2", CFG
        )
        assert outcome.quarantined[0].reason is QuarantineReason.UNVALIDATED_VERSION

    def test_unknown_source_version_quarantined(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="KEEP", version="v99")], system, "v2", CFG
        )
        assert outcome.quarantined[0].reason is QuarantineReason.UNVALIDATED_VERSION

    def test_newer_than_target_quarantined(self):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="KEEP", version="v2")], system, "v1", CFG
        )
        assert outcome.quarantined[0].reason is QuarantineReason.UNMAPPABLE_CODE

    def test_unknown_target_refused(self):
        with pytest.raises(ValidationError, match="unknown version"):
            gate_batch([], migration_system(), "v9", CFG)

    def test_unvalidated_target_refused(self):
        with pytest.raises(ValidationError, match="migration validation"):
            gate_batch([], migration_system(), "v0", CFG)

    def test_partition_on_randomized_batches(self):
        system = migration_system()
        rng = np.random.default_rng(17)
        codes = ["KEEP", "RENAME-1", "GONE", "SPLIT", "OLD", "BOGUS"]
        versions = ["v0", "v1", "v2", "v99"]
        for trial in range(50):
            batch = [
                make_record(
                    f"T{trial}-{i}",
                    code=codes[rng.integers(len(codes))],
                    version=versions[rng.integers(len(versions))],
                )
                for i in range(int(rng.integers(1, 40)))
            ]
            outcome = gate_batch(batch, system, "v2", CFG)
            assert partition_oracle(
                [r.record_id for r in batch],
                [r.record_id for r in outcome.accepted],
                [r.record.record_id for r in outcome.reconciled],
                [r.record.record_id for r in outcome.quarantined],
            )

    def test_quarantine_file_round_trip(self, tmp_path):
        system = migration_system()
        outcome = gate_batch(
            [make_record(code="GONE", version="v1")], system, "v2", CFG
        )
        path = tmp_path / "quarantine.jsonl"
        write_quarantine(path, outcome.quarantined)
        rows = read_quarantine(path)
        assert rows[0]["reason"] == "unmappable_code"
        assert rows[0]["original_code"] == "GONE"
        assert rows[0]["original_version"] == "v1"


class TestValidateMigration:
    def test_full_coverage_validated(self):
        report = validate_migration(
            migration_system(), "v1", "v2", {"KEEP", "RENAME-1"}
        )
        assert report.mapping_coverage == 1.0
        assert report.verdict is MigrationVerdict.VALIDATED
        assert report.changed_codes == ("RENAME-1",)

    def test_partial_coverage_blocked(self):
        # 38 of 40 observed codes covered -> coverage 0.95, blocked.
        codes = [
            {"code": f"C{i:02d}", "clinical_group": "g", "billing_category": "b",
             "description": ""}
            for i in range(40)
        ]
        system = tiny_system(
            versions=[
                {"label": "v1", "release_date": "2024-01-01", "validated": True},
                {"label": "v2", "release_date": "2025-01-01", "validated": True},
            ],
            codes={"v1": codes, "v2": codes},
            transitions=[{
                "from": "v1", "to": "v2",
                "mappings": [
                    {"from_code": f"C{i:02d}", "to_code": f"C{i:02d}"}
                    for i in range(38)
                ],
                "unmappable": [],
            }],
        )
        report = validate_migration(
            system, "v1", "v2", {f"C{i:02d}" for i in range(40)}
        )
        assert report.mapping_coverage == pytest.approx(0.95)
        assert report.verdict is MigrationVerdict.BLOCKED
        assert set(report.unmappable_codes) == {"C38", "C39"}

    def test_missing_table_blocked_with_zero_coverage(self):
        system = tiny_system(transitions=[])
        report = validate_migration(system, "v1", "v2", {"AAA"})
        assert report.mapping_coverage == 0.0
        assert report.verdict is MigrationVerdict.BLOCKED

    def test_acknowledged_codes_unblock(self):
        report = validate_migration(
            migration_system(), "v1", "v2", {"KEEP", "GONE"},
            acknowledged_codes={"GONE"},
        )
        assert report.verdict is MigrationVerdict.VALIDATED
        assert report.mapping_coverage == pytest.approx(0.5)

    def test_unknown_version_rejected(self):
        with pytest.raises(ValidationError, match="unknown version"):
            validate_migration(migration_system(), "v1", "v9", set())


def test_changed_codes_cover_renames_splits_unmappables():
    touched = changed_codes(migration_system(), "v1", "v2")
    assert touched == {"RENAME-1", "RENAME-2", "GONE", "SPLIT", "SPLIT-A", "SPLIT-B"}
