"""Synthetic encounter batches with controlled, labeled distortions.

Every distortion the pipeline is supposed to detect is injected here with
ground truth attached, so detection quality is measurable instead of
anecdotal. Batches are a pure function of (system, spec, n, seed): the same
inputs produce byte-identical output.

Stratum sizes (records per code, per institution, per AI-influence quota)
are drawn by largest-remainder apportionment, so a weight whose product
with n is integral yields exactly that count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .model import (
    AGE_BANDS,
    SEXES,
    CodedRecord,
    CodeSystem,
    InfluenceTag,
    TimeWindow,
    ValidationError,
    jsonl_dumps,
)


class DistortionLabel(str, Enum):
    CATCH_ALL = "catch_all"
    BILLING_INFLATION = "billing_inflation"
    VERSION_LAG = "version_lag"
    AI_INFLUENCED = "ai_influenced"
    OUTBREAK = "outbreak"


@dataclass(frozen=True)
class CatchAllSpec:
    """At one institution, clinical-group siblings of ``target_code`` are
    documented as the catch-all target with probability ``excess_rate``."""

    institution_id: str
    target_code: str
    excess_rate: float


@dataclass(frozen=True)
class BillingInflationSpec:
    """From ``start`` on, donor codes (clinical-group mates of the category's
    members) are recoded into the billing category, scaling its coded rate
    by roughly ``rate_multiplier``."""

    billing_category: str
    start: date
    rate_multiplier: float


@dataclass(frozen=True)
class AIInfluenceSpec:
    model_version: str
    schedule: tuple[float, ...]

    def fraction_for(self, quarter_index: int) -> float:
        if not self.schedule:
            return 0.0
        if quarter_index < len(self.schedule):
            return self.schedule[quarter_index]
        return self.schedule[-1]


@dataclass(frozen=True)
class OutbreakSpec:
    """From ``start`` on, the code's prevalence is multiplied; clinical-group
    siblings co-elevate at half strength, the way genuine epidemiological
    shifts move related codes together. Affected codes also skew toward the
    outbreak's (younger) demographic."""

    code: str
    start: date
    prevalence_multiplier: float


# Age skew applied to outbreak-affected codes: epidemics change who gets
# coded, not just how often.
OUTBREAK_AGE_TILT: Mapping[str, float] = {
    "0-9": 0.30, "10-19": 0.25, "20-29": 0.20, "30-39": 0.15, "40-49": 0.10,
}


@dataclass(frozen=True)
class DistortionSpec:
    institutions: tuple[tuple[str, float], ...]
    current_version: str
    catch_all: tuple[CatchAllSpec, ...] = ()
    billing_inflation: tuple[BillingInflationSpec, ...] = ()
    version_mix: Mapping[str, str] = field(default_factory=dict)
    ai_influence: AIInfluenceSpec | None = None
    outbreak: OutbreakSpec | None = None

    def institution_ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.institutions)

    def without_onset_distortions(self) -> "DistortionSpec":
        """Standing institutional habits only: strips the distortions that
        switch on at a point in time. Used to build reference history."""
        return replace(
            self,
            billing_inflation=(),
            ai_influence=None,
            outbreak=None,
            version_mix={},
        )


@dataclass(frozen=True)
class GroundTruthEntry:
    true_clinical_code: str
    distortion_labels: frozenset[str]


@dataclass(frozen=True)
class GroundTruth:
    entries: Mapping[str, GroundTruthEntry]

    def __getitem__(self, record_id: str) -> GroundTruthEntry:
        return self.entries[record_id]

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self, record_id: str) -> frozenset[str]:
        return self.entries[record_id].distortion_labels

    def merged_with(self, other: "GroundTruth") -> "GroundTruth":
        merged = dict(self.entries)
        merged.update(other.entries)
        return GroundTruth(merged)


def validate_spec(system: CodeSystem, spec: DistortionSpec) -> None:
    if not system.has_version(spec.current_version):
        raise ValidationError(f"unknown version: {spec.current_version!r}")
    codes = system.codes(spec.current_version)
    institutions = set(spec.institution_ids())
    if not institutions:
        raise ValidationError("spec declares no institutions")
    total_weight = sum(w for _, w in spec.institutions)
    if abs(total_weight - 1.0) > 1e-6:
        raise ValidationError(f"institution weights must sum to 1, got {total_weight}")
    if any(w < 0 for _, w in spec.institutions):
        raise ValidationError("institution weights must be non-negative")
    for entry in spec.catch_all:
        if entry.institution_id not in institutions:
            raise ValidationError(f"catch_all references unknown institution {entry.institution_id!r}")
        if entry.target_code not in codes:
            raise ValidationError(f"catch_all references unknown code {entry.target_code!r}")
        if not 0.0 <= entry.excess_rate <= 1.0:
            raise ValidationError(f"catch_all excess_rate must be in [0,1], got {entry.excess_rate}")
    for entry in spec.billing_inflation:
        if system.billing_categories and entry.billing_category not in system.billing_categories:
            raise ValidationError(
                f"billing_inflation references unknown category {entry.billing_category!r}"
            )
        if not entry.rate_multiplier > 0:
            raise ValidationError("billing_inflation rate_multiplier must be > 0")
    for inst, label in spec.version_mix.items():
        if inst not in institutions:
            raise ValidationError(f"version_mix references unknown institution {inst!r}")
        if not system.has_version(label):
            raise ValidationError(f"version_mix references unknown version {label!r}")
    if spec.ai_influence is not None:
        for fraction in spec.ai_influence.schedule:
            if not 0.0 <= fraction <= 1.0:
                raise ValidationError(f"ai_influence fraction must be in [0,1], got {fraction}")
    if spec.outbreak is not None:
        if spec.outbreak.code not in codes:
            raise ValidationError(f"outbreak references unknown code {spec.outbreak.code!r}")
        if not spec.outbreak.prevalence_multiplier > 0:
            raise ValidationError("outbreak prevalence_multiplier must be > 0")


def _largest_remainder(weights: Sequence[float], keys: Sequence[str], n: int) -> dict[str, int]:
    """Apportion n among strata so counts sum exactly to n; ties broken by key."""
    total = float(sum(weights))
    if total <= 0:
        raise ValidationError("stratum weights must have positive mass")
    shares = [w / total * n for w in weights]
    counts = [int(share) for share in shares]
    leftover = n - sum(counts)
    order = sorted(range(len(keys)), key=lambda i: (-(shares[i] - counts[i]), keys[i]))
    for i in order[:leftover]:
        counts[i] += 1
    return dict(zip(keys, counts))


def _effective_prevalence(
    system: CodeSystem, spec: DistortionSpec, window: TimeWindow
) -> dict[str, float]:
    """Base prevalence with any active outbreak applied.

    Boosted codes take their multiplied rate as absolute prevalence; the
    remaining codes share what is left proportionally, so the boosted code's
    observed prevalence ratio equals its multiplier.
    """
    prevalence = dict(system.base_prevalence)
    if not prevalence:
        raise ValidationError("code system declares no base_prevalence")
    outbreak = spec.outbreak
    if outbreak is None or window.start < outbreak.start:
        total = sum(prevalence.values())
        return {code: rate / total for code, rate in prevalence.items()}

    codes = system.codes(spec.current_version)
    group = codes[outbreak.code].clinical_group
    sibling_multiplier = 1.0 + (outbreak.prevalence_multiplier - 1.0) / 2.0
    boosted: dict[str, float] = {}
    for code, rate in prevalence.items():
        if code == outbreak.code:
            boosted[code] = rate * outbreak.prevalence_multiplier
        elif code in codes and codes[code].clinical_group == group:
            boosted[code] = rate * sibling_multiplier
    base_total = sum(prevalence.values())
    boosted_total = sum(boosted.values())
    if boosted_total >= base_total:
        raise ValidationError("outbreak multiplier leaves no mass for unaffected codes")
    rest_scale = (base_total - boosted_total) / (base_total - sum(
        prevalence[c] for c in boosted
    ))
    out = {
        code: boosted.get(code, rate * rest_scale)
        for code, rate in prevalence.items()
    }
    total = sum(out.values())
    return {code: rate / total for code, rate in out.items()}


def _profile_arrays(profile: Mapping[str, float], support: Sequence[str]) -> np.ndarray:
    weights = np.array([float(profile.get(key, 0.0)) for key in support], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        return np.full(len(support), 1.0 / len(support))
    return weights / total


def _weighted_sample_without_replacement(
    rng: np.random.Generator, weights: np.ndarray, sizes: np.ndarray
) -> list[np.ndarray]:
    """Per-row weighted sampling without replacement (Efraimidis-Spirakis keys)."""
    m = len(sizes)
    if m == 0:
        return []
    u = rng.random((m, len(weights)))
    keys = u ** (1.0 / np.maximum(weights, 1e-12))
    keys[:, weights <= 0] = -1.0
    order = np.argsort(-keys, axis=1)
    return [order[i, : sizes[i]] for i in range(m)]


def generate_batch(
    system: CodeSystem,
    spec: DistortionSpec,
    n: int,
    seed: int | Sequence[int],
    window: TimeWindow | None = None,
    id_prefix: str = "R",
    quarter_index: int = 0,
) -> tuple[list[CodedRecord], GroundTruth]:
    """Generate exactly n records plus ground truth for one window.

    Deterministic for a fixed seed. ``quarter_index`` selects the AI
    influence fraction from the spec's schedule.
    """
    if n < 0:
        raise ValidationError(f"n must be >= 0, got {n}")
    validate_spec(system, spec)
    if window is None:
        window = TimeWindow(date(2025, 1, 1), date(2025, 3, 31))
    if n == 0:
        return [], GroundTruth({})

    rng = np.random.default_rng(seed)
    codes_def = system.codes(spec.current_version)
    prevalence = _effective_prevalence(system, spec, window)
    code_list = sorted(prevalence)

    code_counts = _largest_remainder(
        [prevalence[c] for c in code_list], code_list, n
    )
    code_index = np.repeat(
        np.arange(len(code_list)), [code_counts[c] for c in code_list]
    )
    rng.shuffle(code_index)

    inst_ids = [i for i, _ in spec.institutions]
    inst_counts = _largest_remainder([w for _, w in spec.institutions], inst_ids, n)
    inst_index = np.repeat(np.arange(len(inst_ids)), [inst_counts[i] for i in inst_ids])
    rng.shuffle(inst_index)

    outbreak_codes: dict[str, float] = {}
    if spec.outbreak is not None and window.start >= spec.outbreak.start:
        group = codes_def[spec.outbreak.code].clinical_group
        for code, cdef in codes_def.items():
            if cdef.clinical_group == group:
                outbreak_codes[code] = 0.5

    age_idx = np.zeros(n, dtype=np.int64)
    sex_idx = np.zeros(n, dtype=np.int64)
    tilt = _profile_arrays(OUTBREAK_AGE_TILT, AGE_BANDS)
    for ci, code in enumerate(code_list):
        rows = np.flatnonzero(code_index == ci)
        if rows.size == 0:
            continue
        profile = system.demographic_profiles.get(code, {})
        age_p = _profile_arrays(profile.get("age", {}), AGE_BANDS)
        blend = outbreak_codes.get(code)
        if blend is not None:
            age_p = (1.0 - blend) * age_p + blend * tilt
        sex_p = _profile_arrays(profile.get("sex", {}), SEXES)
        age_idx[rows] = rng.choice(len(AGE_BANDS), size=rows.size, p=age_p)
        sex_idx[rows] = rng.choice(len(SEXES), size=rows.size, p=sex_p)

    window_seconds = int(
        (datetime.combine(window.end, datetime.min.time()) + timedelta(days=1)
         - datetime.combine(window.start, datetime.min.time())).total_seconds()
    )
    offsets = rng.integers(0, window_seconds, size=n)
    start_dt = datetime.combine(window.start, datetime.min.time())

    co_codes: list[tuple[str, ...]] = [()] * n
    for ci, code in enumerate(code_list):
        rows = np.flatnonzero(code_index == ci)
        if rows.size == 0:
            continue
        profile = system.cooccurrence_profiles.get(code, {})
        support = sorted(profile)
        if not support:
            continue
        weights = np.array([profile[c] for c in support], dtype=np.float64)
        k_max = min(len(support), 4)
        if len(support) < 2:
            sizes = np.full(rows.size, len(support))
        else:
            sizes = rng.integers(2, k_max + 1, size=rows.size)
        picks = _weighted_sample_without_replacement(rng, weights, sizes)
        for row, pick in zip(rows, picks):
            co_codes[row] = tuple(support[j] for j in pick)

    true_codes = [code_list[i] for i in code_index]
    primary = list(true_codes)
    labels: list[set[str]] = [set() for _ in range(n)]
    institutions = [inst_ids[i] for i in inst_index]

    # Catch-all habit: rewrites siblings to the configured target.
    for entry in spec.catch_all:
        target_def = codes_def.get(entry.target_code)
        if target_def is None:
            continue
        siblings = {
            c for c, d in codes_def.items()
            if d.clinical_group == target_def.clinical_group and c != entry.target_code
        }
        draws = rng.random(n)
        for i in range(n):
            if (institutions[i] == entry.institution_id
                    and true_codes[i] in siblings
                    and primary[i] == true_codes[i]
                    and draws[i] < entry.excess_rate):
                primary[i] = entry.target_code
                labels[i].add(DistortionLabel.CATCH_ALL.value)

    # Billing-guideline recoding into a category, scaling its coded rate.
    for entry in spec.billing_inflation:
        if window.start < entry.start:
            continue
        members = {
            c for c, d in codes_def.items()
            if d.billing_category == entry.billing_category and c in prevalence
        }
        if not members:
            continue
        member_groups = {codes_def[c].clinical_group for c in members}
        donors = {
            c for c in prevalence
            if c not in members and codes_def[c].clinical_group in member_groups
        }
        if not donors:
            continue
        member_mass = sum(prevalence[c] for c in members)
        donor_mass = sum(prevalence[c] for c in donors)
        p_rewrite = min(1.0, (entry.rate_multiplier - 1.0) * member_mass / donor_mass)
        group_targets = {
            group: sorted(c for c in members if codes_def[c].clinical_group == group)
            for group in member_groups
        }
        draws = rng.random(n)
        target_draws = rng.random(n)
        for i in range(n):
            code = true_codes[i]
            if code not in donors or primary[i] != code or draws[i] >= p_rewrite:
                continue
            targets = group_targets[codes_def[code].clinical_group]
            weights = np.array([prevalence[t] for t in targets])
            cumulative = np.cumsum(weights / weights.sum())
            primary[i] = targets[int(np.searchsorted(cumulative, target_draws[i]))]
            labels[i].add(DistortionLabel.BILLING_INFLATION.value)

    if spec.outbreak is not None and window.start >= spec.outbreak.start:
        for i in range(n):
            if true_codes[i] == spec.outbreak.code:
                labels[i].add(DistortionLabel.OUTBREAK.value)

    version_tags = [spec.current_version] * n
    for i in range(n):
        lag = spec.version_mix.get(institutions[i])
        if lag is not None and lag != spec.current_version:
            version_tags[i] = lag
            labels[i].add(DistortionLabel.VERSION_LAG.value)

    influence: list[InfluenceTag | None] = [None] * n
    if spec.ai_influence is not None:
        fraction = spec.ai_influence.fraction_for(quarter_index)
        count = int(round(fraction * n))
        if count > 0:
            chosen = rng.choice(n, size=count, replace=False)
            confidences = rng.uniform(0.55, 0.95, size=count)
            modified = rng.random(count) < 0.25
            for j, i in enumerate(chosen):
                influence[i] = InfluenceTag(
                    model_version=spec.ai_influence.model_version,
                    model_confidence=float(confidences[j]),
                    clinician_modified=bool(modified[j]),
                )
                labels[i].add(DistortionLabel.AI_INFLUENCED.value)

    records: list[CodedRecord] = []
    truth: dict[str, GroundTruthEntry] = {}
    for i in range(n):
        record_id = f"{id_prefix}-{i:06d}"
        records.append(CodedRecord(
            record_id=record_id,
            patient_age_band=AGE_BANDS[age_idx[i]],
            patient_sex=SEXES[sex_idx[i]],
            institution_id=institutions[i],
            encounter_time=start_dt + timedelta(seconds=int(offsets[i])),
            primary_code=primary[i],
            co_codes=frozenset(co_codes[i]),
            version_tag=version_tags[i],
            influence_tag=influence[i],
        ))
        truth[record_id] = GroundTruthEntry(
            true_clinical_code=true_codes[i],
            distortion_labels=frozenset(labels[i]),
        )
    return records, GroundTruth(truth)


def quarter_window(start: date, quarter_index: int) -> TimeWindow:
    """Calendar window of the (0-based) quarter beginning at ``start``."""
    month = start.month - 1 + 3 * quarter_index
    first = date(start.year + month // 12, month % 12 + 1, 1)
    end_month = start.month - 1 + 3 * (quarter_index + 1)
    next_first = date(start.year + end_month // 12, end_month % 12 + 1, 1)
    return TimeWindow(first, next_first - timedelta(days=1))


def generate_quarter_series(
    system: CodeSystem,
    spec: DistortionSpec,
    quarters: int,
    n_per_quarter: int,
    seed: int,
    start: date = date(2025, 1, 1),
) -> tuple[list[list[CodedRecord]], GroundTruth]:
    """Generate consecutive quarterly batches; the AI influence fraction is
    taken per quarter from the spec's schedule."""
    if quarters <= 0:
        raise ValidationError(f"quarters must be positive, got {quarters}")
    batches: list[list[CodedRecord]] = []
    truth = GroundTruth({})
    for q in range(quarters):
        window = quarter_window(start, q)
        batch, batch_truth = generate_batch(
            system,
            spec,
            n_per_quarter,
            seed=[seed, q],
            window=window,
            id_prefix=f"Q{q + 1}",
            quarter_index=q,
        )
        batches.append(batch)
        truth = truth.merged_with(batch_truth)
    return batches, truth


# ---------------------------------------------------------------------------
# Spec and ground-truth (de)serialization
# ---------------------------------------------------------------------------

def spec_from_dict(data: Mapping[str, Any]) -> DistortionSpec:
    ai = data.get("ai_influence")
    outbreak = data.get("outbreak")
    return DistortionSpec(
        institutions=tuple(
            (entry["institution_id"], float(entry["weight"]))
            for entry in data["institutions"]
        ),
        current_version=data["current_version"],
        catch_all=tuple(
            CatchAllSpec(e["institution_id"], e["target_code"], float(e["excess_rate"]))
            for e in data.get("catch_all", ())
        ),
        billing_inflation=tuple(
            BillingInflationSpec(
                e["billing_category"], date.fromisoformat(e["start"]),
                float(e["rate_multiplier"]),
            )
            for e in data.get("billing_inflation", ())
        ),
        version_mix=dict(data.get("version_mix", {})),
        ai_influence=None if ai is None else AIInfluenceSpec(
            model_version=ai["model_version"],
            schedule=tuple(float(f) for f in ai["schedule"]),
        ),
        outbreak=None if outbreak is None else OutbreakSpec(
            code=outbreak["code"],
            start=date.fromisoformat(outbreak["start"]),
            prevalence_multiplier=float(outbreak["prevalence_multiplier"]),
        ),
    )


def spec_to_dict(spec: DistortionSpec) -> dict[str, Any]:
    return {
        "institutions": [
            {"institution_id": i, "weight": w} for i, w in spec.institutions
        ],
        "current_version": spec.current_version,
        "catch_all": [
            {"institution_id": e.institution_id, "target_code": e.target_code,
             "excess_rate": e.excess_rate}
            for e in spec.catch_all
        ],
        "billing_inflation": [
            {"billing_category": e.billing_category, "start": e.start.isoformat(),
             "rate_multiplier": e.rate_multiplier}
            for e in spec.billing_inflation
        ],
        "version_mix": dict(sorted(spec.version_mix.items())),
        "ai_influence": None if spec.ai_influence is None else {
            "model_version": spec.ai_influence.model_version,
            "schedule": list(spec.ai_influence.schedule),
        },
        "outbreak": None if spec.outbreak is None else {
            "code": spec.outbreak.code,
            "start": spec.outbreak.start.isoformat(),
            "prevalence_multiplier": spec.outbreak.prevalence_multiplier,
        },
    }


def write_ground_truth(path: str | Path, truth: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record_id in sorted(truth.entries):
            entry = truth.entries[record_id]
            fh.write(jsonl_dumps({
                "record_id": record_id,
                "true_clinical_code": entry.true_clinical_code,
                "distortion_labels": sorted(entry.distortion_labels),
            }))
            fh.write("\n")


def read_ground_truth(path: str | Path) -> GroundTruth:
    entries: dict[str, GroundTruthEntry] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            entries[data["record_id"]] = GroundTruthEntry(
                true_clinical_code=data["true_clinical_code"],
                distortion_labels=frozenset(data["distortion_labels"]),
            )
    return GroundTruth(entries)
