"""Feedback-loop circuit breaker for retraining on AI-influenced data.

Records carrying an influence tag are counted per training cohort; the
resulting ratio drives a three-state gate. The breaker opens strictly above
the threshold ("exceeds" means >, so a ratio exactly at the threshold stays
closed), and warns when the ratio is still below threshold but has risen
for three consecutive periods and its trend crosses the threshold next
period. A toy risk model closes the loop at desk scale; its predictive
quality is a non-goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    CodedRecord,
    InfluenceTag,
    PipelineConfig,
    ValidationError,
    canonical_dumps,
)


@dataclass(frozen=True)
class InfluenceStats:
    cohort_id: str
    ratio: float
    tagged_count: int
    total_count: int
    history: tuple[tuple[str, float], ...]


class BreakerStateKind(str, Enum):
    CLOSED = "closed"
    WARNING = "warning"
    OPEN = "open"


@dataclass(frozen=True)
class BreakerState:
    state: BreakerStateKind
    reason: str
    threshold_used: float


@dataclass(frozen=True)
class ToyRiskModel:
    """Per-code outcome-rate scorer standing in for the real risk model."""

    model_version: str
    weights: Mapping[str, float]
    training_cohort_id: str

    def version_number(self) -> int:
        return int(self.model_version.rsplit("-", 1)[-1])

    def score(self, record: CodedRecord) -> float:
        codes = [record.primary_code, *sorted(record.co_codes)]
        values = [self.weights.get(code, 0.5) for code in codes]
        return sum(values) / len(values)


@dataclass(frozen=True)
class Refusal:
    reason: str
    stats: InfluenceStats
    state: BreakerState


@dataclass(frozen=True)
class ModelSuggestion:
    source_record: CodedRecord
    suggested_code: str
    confidence: float


# Co-codes treated as the positive outcome when fitting the toy model.
OUTCOME_MARKERS = frozenset({"LAB-HBA1C-HI", "LAB-GLU-HI"})


def compute_stats(
    cohort: Sequence[CodedRecord],
    history: Sequence[tuple[str, float]],
    cohort_id: str = "cohort",
    period: str | None = None,
) -> InfluenceStats:
    """Tagged-over-total ratio for a cohort, appended to the period history."""
    total = len(cohort)
    tagged = sum(1 for record in cohort if record.influence_tag is not None)
    ratio = tagged / total if total else 0.0
    if period is None:
        period = f"period-{len(history) + 1}"
    return InfluenceStats(
        cohort_id=cohort_id,
        ratio=ratio,
        tagged_count=tagged,
        total_count=total,
        history=tuple(history) + ((period, ratio),),
    )


def evaluate(stats: InfluenceStats, cfg: PipelineConfig) -> BreakerState:
    """Open strictly above threshold; warn on a rising trend about to cross."""
    threshold = cfg.breaker_threshold
    ratio = stats.ratio
    if ratio > threshold:
        return BreakerState(
            state=BreakerStateKind.OPEN,
            reason=(
                f"AI influence ratio {ratio:.4f} exceeds threshold {threshold:.4f}; "
                "automatic retraining paused pending audit"
            ),
            threshold_used=threshold,
        )
    ratios = [r for _, r in stats.history]
    if len(ratios) >= 3:
        r3, r2, r1 = ratios[-3], ratios[-2], ratios[-1]
        rising = r3 < r2 < r1
        projected = r1 + ((r1 - r2) + (r2 - r3)) / 2.0
        if rising and projected > threshold:
            return BreakerState(
                state=BreakerStateKind.WARNING,
                reason=(
                    f"AI influence ratio {ratio:.4f} below threshold {threshold:.4f} "
                    f"but rising for three periods; projected {projected:.4f} may "
                    "breach the threshold by the next cycle"
                ),
                threshold_used=threshold,
            )
    return BreakerState(
        state=BreakerStateKind.CLOSED,
        reason=f"AI influence ratio {ratio:.4f} within threshold {threshold:.4f}",
        threshold_used=threshold,
    )


def _outcome(record: CodedRecord) -> bool:
    return bool(record.co_codes & OUTCOME_MARKERS)


def retrain_gate(
    state: BreakerState,
    cohort: Sequence[CodedRecord],
    model: ToyRiskModel,
    stats: InfluenceStats | None = None,
) -> ToyRiskModel | Refusal:
    """Retrain in closed/warning state; refuse with an audit packet when open.

    Retraining fits per-code empirical outcome rates over the cohort and
    bumps the model version.
    """
    if state.state is BreakerStateKind.OPEN:
        if stats is None:
            stats = InfluenceStats(
                cohort_id=model.training_cohort_id, ratio=0.0,
                tagged_count=0, total_count=0, history=(),
            )
        return Refusal(
            reason=state.reason,
            stats=stats,
            state=state,
        )
    if not cohort:
        raise ValidationError("cannot retrain on an empty cohort")
    totals: dict[str, int] = {}
    positives: dict[str, int] = {}
    for record in cohort:
        outcome = _outcome(record)
        for code in {record.primary_code, *record.co_codes}:
            totals[code] = totals.get(code, 0) + 1
            if outcome:
                positives[code] = positives.get(code, 0) + 1
    weights = {code: positives.get(code, 0) / totals[code] for code in sorted(totals)}
    return ToyRiskModel(
        model_version=f"toy-risk-{model.version_number() + 1}",
        weights=weights,
        training_cohort_id=stats.cohort_id if stats is not None else model.training_cohort_id,
    )


def suggest(
    model: ToyRiskModel,
    batch: Sequence[CodedRecord],
    suggested_code: str,
    top_fraction: float = 0.1,
) -> list[ModelSuggestion]:
    """Model suggestions for the highest-risk slice of a batch."""
    scored = sorted(
        ((model.score(record), record) for record in batch),
        key=lambda pair: (-pair[0], pair[1].record_id),
    )
    keep = int(round(top_fraction * len(scored)))
    return [
        ModelSuggestion(source_record=record, suggested_code=suggested_code,
                        confidence=min(1.0, score))
        for score, record in scored[:keep]
    ]


def tag_outputs(
    predictions: Sequence[ModelSuggestion],
    model_version: str,
    acceptance_fraction: float,
    modification_fraction: float,
    seed: int,
) -> list[CodedRecord]:
    """Turn accepted suggestions into new influence-tagged records.

    Each suggestion is accepted with ``acceptance_fraction`` probability;
    accepted ones become follow-up records tagged with the model version,
    the suggestion confidence, and whether the clinician modified it.
    """
    rng = np.random.default_rng(seed)
    accepted = rng.random(len(predictions)) < acceptance_fraction
    modified = rng.random(len(predictions)) < modification_fraction
    tagged: list[CodedRecord] = []
    for i, suggestion in enumerate(predictions):
        if not accepted[i]:
            continue
        source = suggestion.source_record
        tagged.append(CodedRecord(
            record_id=f"{source.record_id}-S",
            patient_age_band=source.patient_age_band,
            patient_sex=source.patient_sex,
            institution_id=source.institution_id,
            encounter_time=source.encounter_time,
            primary_code=suggestion.suggested_code,
            co_codes=frozenset(),
            version_tag=source.version_tag,
            influence_tag=InfluenceTag(
                model_version=model_version,
                model_confidence=suggestion.confidence,
                clinician_modified=bool(modified[i]),
            ),
        ))
    return tagged


def write_influence_csv(
    rows: Iterable[tuple[str, InfluenceStats, BreakerState]], path: str | Path
) -> None:
    """Dashboard export: one line per (period, cohort) with ratio and state."""
    lines = ["period,cohort,ratio,state"]
    for period, stats, state in rows:
        lines.append(f"{period},{stats.cohort_id},{stats.ratio:.6f},{state.state.value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_refusal_packet(refusal: Refusal, path: str | Path) -> None:
    payload = {
        "reason": refusal.reason,
        "state": refusal.state.state.value,
        "threshold_used": refusal.state.threshold_used,
        "stats": {
            "cohort_id": refusal.stats.cohort_id,
            "ratio": refusal.stats.ratio,
            "tagged_count": refusal.stats.tagged_count,
            "total_count": refusal.stats.total_count,
            "history": [[p, r] for p, r in refusal.stats.history],
        },
    }
    Path(path).write_text(canonical_dumps(payload), encoding="utf-8")


def read_history(text: str) -> list[tuple[str, float]]:
    """Parse a period history from either JSON or a comma list of ratios."""
    text = text.strip()
    if not text:
        return []
    if text.startswith("["):
        return [(p, float(r)) for p, r in json.loads(text)]
    values = [float(part) for part in text.split(",") if part.strip()]
    return [(f"period-{i + 1}", value) for i, value in enumerate(values)]
