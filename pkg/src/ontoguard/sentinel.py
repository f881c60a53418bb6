"""Semantic drift monitoring over per-code usage fingerprints.

A fingerprint captures how a code is used: which co-codes accompany it, who
it is coded for, when and how often within the window, and where. Baseline
and current fingerprints are compared by a weighted mean of base-2
Jensen-Shannon divergences, and alerts above the threshold are classified
by probable cause:

* epidemiological - co-drift concentrates in the code's clinical group;
* administrative - co-drift concentrates in the code's billing category;
* terminological - the window follows a terminology release that changed
  the code in a transition table.

The classification confidence is an ordinal score ratio, not a probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .model import (
    CodedRecord,
    CodeSystem,
    Layer,
    PipelineConfig,
    TimeWindow,
    ValidationError,
    jsonl_dumps,
    record_code,
)
from .version_gate import changed_codes


class DriftType(str, Enum):
    TYPE_A = "type_a"  # epidemiological
    TYPE_B = "type_b"  # administrative
    TYPE_C = "type_c"  # terminological


@dataclass(frozen=True)
class SemanticFingerprint:
    """Usage context of one code within one window.

    ``temporal_profile`` is the per-month prevalence series;
    ``temporal_mass`` is the same signal as a distribution (monthly share of
    all window records carrying the code, plus the complement), which is
    what the comparison uses so that pure level shifts register as drift.
    """

    code: str
    cooccurrence_dist: Mapping[str, float]
    demographic_dist: Mapping[tuple[str, str], float]
    temporal_profile: tuple[float, ...]
    temporal_mass: tuple[float, ...]
    institutional_dist: Mapping[str, float]
    window: TimeWindow
    support: int


@dataclass(frozen=True)
class FingerprintSet:
    by_code: Mapping[str, SemanticFingerprint]
    low_support: tuple[tuple[str, int], ...]
    window: TimeWindow


@dataclass(frozen=True)
class DriftAlert:
    code: str
    divergence: float
    drift_type: DriftType
    confidence: float
    component_divergences: Mapping[str, float]
    evidence: Mapping[str, Any]


def _month_index(window: TimeWindow) -> list[tuple[int, int]]:
    months = []
    y, m = window.start.year, window.start.month
    while (y, m) <= (window.end.year, window.end.month):
        months.append((y, m))
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return months


def build_fingerprints(
    batch: Sequence[CodedRecord],
    window: TimeWindow,
    cfg: PipelineConfig,
    layer: Layer,
) -> FingerprintSet:
    """One fingerprint per code observed at least ``fingerprint_min_support``
    times; under-supported codes are listed instead of fingerprinted."""
    if not batch:
        raise ValidationError("cannot fingerprint an empty batch")
    months = _month_index(window)
    month_pos = {ym: i for i, ym in enumerate(months)}
    month_totals = np.zeros(len(months))
    n = len(batch)

    per_code: dict[str, dict[str, Any]] = {}
    for record in batch:
        code = record_code(record, layer)
        info = per_code.setdefault(code, {
            "count": 0,
            "co": {},
            "demo": {},
            "months": np.zeros(len(months)),
            "inst": {},
        })
        info["count"] += 1
        for co in record.co_codes:
            info["co"][co] = info["co"].get(co, 0) + 1
        demo_key = (record.patient_age_band, record.patient_sex)
        info["demo"][demo_key] = info["demo"].get(demo_key, 0) + 1
        ym = (record.encounter_time.year, record.encounter_time.month)
        pos = month_pos.get(ym)
        if pos is not None:
            info["months"][pos] += 1
            month_totals[pos] += 1
        info["inst"][record.institution_id] = info["inst"].get(record.institution_id, 0) + 1

    def normalized(counts: Mapping) -> dict:
        total = sum(counts.values())
        if total == 0:
            return {}
        return {key: value / total for key, value in counts.items()}

    by_code: dict[str, SemanticFingerprint] = {}
    low_support: list[tuple[str, int]] = []
    for code in sorted(per_code):
        info = per_code[code]
        if info["count"] < cfg.fingerprint_min_support:
            low_support.append((code, info["count"]))
            continue
        profile = np.divide(
            info["months"], month_totals,
            out=np.zeros_like(month_totals), where=month_totals > 0,
        )
        mass = info["months"] / n
        by_code[code] = SemanticFingerprint(
            code=code,
            cooccurrence_dist=normalized(info["co"]),
            demographic_dist=normalized(info["demo"]),
            temporal_profile=tuple(float(x) for x in profile),
            temporal_mass=tuple(float(x) for x in mass) + (float(1.0 - mass.sum()),),
            institutional_dist=normalized(info["inst"]),
            window=window,
            support=info["count"],
        )
    return FingerprintSet(by_code=by_code, low_support=tuple(low_support), window=window)


def aligned_jsd(dist_a: Mapping, dist_b: Mapping) -> float:
    """Base-2 JSD of two sparse distributions aligned on their key union.

    A distribution with no mass at all counts as maximally divergent from a
    non-empty one and identical to another empty one.
    """
    keys = sorted(set(dist_a) | set(dist_b))
    if not keys:
        return 0.0
    p = np.array([dist_a.get(k, 0.0) for k in keys])
    q = np.array([dist_b.get(k, 0.0) for k in keys])
    if p.sum() == 0.0 or q.sum() == 0.0:
        return 0.0 if p.sum() == q.sum() else 1.0
    return kernels.jsd_base2(p, q)


def _temporal_jsd(mass_a: tuple[float, ...], mass_b: tuple[float, ...]) -> float:
    # Mass vectors end with the complement cell; pad the month cells so the
    # complements stay aligned.
    k = max(len(mass_a), len(mass_b)) - 1
    p = np.zeros(k + 1)
    q = np.zeros(k + 1)
    p[: len(mass_a) - 1] = mass_a[:-1]
    p[-1] = mass_a[-1]
    q[: len(mass_b) - 1] = mass_b[:-1]
    q[-1] = mass_b[-1]
    return kernels.jsd_base2(p, q)


COMPONENTS = ("cooccurrence", "demographic", "temporal", "institutional")


def component_divergences(
    baseline: SemanticFingerprint, current: SemanticFingerprint
) -> dict[str, float]:
    if baseline.code != current.code:
        raise ValidationError(
            f"fingerprint code mismatch: {baseline.code!r} vs {current.code!r}"
        )
    return {
        "cooccurrence": aligned_jsd(baseline.cooccurrence_dist, current.cooccurrence_dist),
        "demographic": aligned_jsd(baseline.demographic_dist, current.demographic_dist),
        "temporal": _temporal_jsd(baseline.temporal_mass, current.temporal_mass),
        "institutional": aligned_jsd(baseline.institutional_dist, current.institutional_dist),
    }


def compare(
    baseline: SemanticFingerprint,
    current: SemanticFingerprint,
    cfg: PipelineConfig | None = None,
) -> float:
    """Weighted mean of the four component divergences; symmetric, in [0,1],
    and zero exactly when all components agree."""
    weights = (cfg.drift_component_weights if cfg is not None else (0.25,) * 4)
    parts = component_divergences(baseline, current)
    return sum(w * parts[name] for w, name in zip(weights, COMPONENTS))


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def _release_match(
    window: TimeWindow,
    release_calendar: Sequence[tuple[str, date]],
    window_days: int,
) -> tuple[str, date] | None:
    for label, released in release_calendar:
        delta = (window.start - released).days
        if 0 <= delta <= window_days:
            return label, released
    return None


def scan(
    baseline_batch: Sequence[CodedRecord],
    current_batch: Sequence[CodedRecord],
    system: CodeSystem,
    release_calendar: Sequence[tuple[str, date]],
    cfg: PipelineConfig,
    layer: Layer,
    baseline_window: TimeWindow | None = None,
    current_window: TimeWindow | None = None,
) -> list[DriftAlert]:
    """Compare fingerprints across two windows and classify alerts by cause.

    Only alerts at or above ``cfg.drift_threshold`` are emitted, sorted by
    divergence descending. Classification is deterministic; ties fall to the
    administrative type, the conservative "investigate coding practice"
    default.
    """
    baseline_window = baseline_window or cfg.baseline_window or _infer_window(baseline_batch)
    current_window = current_window or cfg.current_window or _infer_window(current_batch)
    base_fps = build_fingerprints(baseline_batch, baseline_window, cfg, layer)
    curr_fps = build_fingerprints(current_batch, current_window, cfg, layer)

    shared = sorted(set(base_fps.by_code) & set(curr_fps.by_code))
    divergences: dict[str, float] = {}
    components: dict[str, dict[str, float]] = {}
    for code in shared:
        parts = component_divergences(base_fps.by_code[code], curr_fps.by_code[code])
        components[code] = parts
        divergences[code] = sum(
            w * parts[name] for w, name in zip(cfg.drift_component_weights, COMPONENTS)
        )

    drifting = {code for code, d in divergences.items() if d >= cfg.drift_threshold}
    release = _release_match(
        current_window, release_calendar, cfg.release_correlation_window_days
    )
    touched: frozenset[str] = frozenset()
    if release is not None and len(system.versions) >= 2:
        labels = [v.version_label for v in system.versions]
        touched = changed_codes(system, labels[0], labels[-1])

    version_label = _dominant_version(current_batch)
    code_defs = system.codes(version_label)

    alerts: list[DriftAlert] = []
    for code in sorted(drifting):
        co_drifting = drifting - {code}
        cdef = code_defs.get(code)
        billing_peers = {
            c for c, d in code_defs.items()
            if cdef is not None and d.billing_category == cdef.billing_category and c != code
        }
        clinical_peers = {
            c for c, d in code_defs.items()
            if cdef is not None and d.clinical_group == cdef.clinical_group and c != code
        }
        score_c = 1.0 if (release is not None and code in touched) else 0.0
        score_b = _jaccard(co_drifting, billing_peers)
        score_a = _jaccard(co_drifting, clinical_peers)
        total = score_a + score_b + score_c
        if total == 0.0:
            drift_type, confidence = DriftType.TYPE_B, 1.0 / 3.0
        else:
            best = max(score_a, score_b, score_c)
            if score_b == best:
                drift_type = DriftType.TYPE_B  # ties resolve to administrative
            elif score_c == best:
                drift_type = DriftType.TYPE_C
            else:
                drift_type = DriftType.TYPE_A
            confidence = best / total
        alerts.append(DriftAlert(
            code=code,
            divergence=divergences[code],
            drift_type=drift_type,
            confidence=confidence,
            component_divergences=components[code],
            evidence={
                "co_drifting_codes": sorted(co_drifting),
                "billing_category": None if cdef is None else cdef.billing_category,
                "billing_overlap": score_b,
                "clinical_group": None if cdef is None else cdef.clinical_group,
                "clinical_overlap": score_a,
                "release_match": None if release is None else {
                    "version": release[0], "release_date": release[1].isoformat(),
                },
                "release_changed_code": bool(score_c),
            },
        ))
    alerts.sort(key=lambda a: (-a.divergence, a.code))
    return alerts


def _infer_window(batch: Sequence[CodedRecord]) -> TimeWindow:
    if not batch:
        raise ValidationError("cannot infer a window from an empty batch")
    days = [record.encounter_time.date() for record in batch]
    return TimeWindow(min(days), max(days))


def _dominant_version(batch: Sequence[CodedRecord]) -> str:
    tags: dict[str, int] = {}
    for record in batch:
        tags[record.version_tag] = tags.get(record.version_tag, 0) + 1
    return max(tags, key=lambda t: (tags[t], t))


def write_alerts(alerts: Iterable[DriftAlert], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for alert in alerts:
            fh.write(jsonl_dumps({
                "code": alert.code,
                "divergence": alert.divergence,
                "drift_type": alert.drift_type.value,
                "confidence": alert.confidence,
                "component_divergences": dict(alert.component_divergences),
                "evidence": dict(alert.evidence),
            }))
            fh.write("\n")
