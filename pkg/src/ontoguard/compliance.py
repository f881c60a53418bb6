"""Pluggable, jurisdiction-tagged compliance adapters.

An adapter is a versioned rule set loaded from a file: an ordered list of
predicate rules over a data operation's context, terminated by a mandatory
default rule so evaluation is total. Rules are declarative configuration,
never compiled-in legal logic, and the shipped fixtures are demonstration
content only. Composition runs every adapter (a deny never short-circuits,
so the audit trail stays complete) and the most restrictive verdict
prevails: deny > permit-with-conditions > permit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .model import ValidationError, canonical_dumps


class OpKind(str, Enum):
    INGEST = "ingest"
    TRAIN = "train"
    DEPLOY = "deploy"
    EXPORT = "export"
    PREDICT = "predict"


ContextValue = str | int | float | bool


@dataclass(frozen=True)
class DataOperation:
    op_kind: OpKind
    context: Mapping[str, ContextValue]


class VerdictKind(str, Enum):
    PERMIT = "permit"
    PERMIT_WITH_CONDITIONS = "permit_with_conditions"
    DENY = "deny"


# deny > permit_with_conditions > permit
RESTRICTIVENESS = {
    VerdictKind.PERMIT: 0,
    VerdictKind.PERMIT_WITH_CONDITIONS: 1,
    VerdictKind.DENY: 2,
}


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    conditions: tuple[str, ...] = ()
    reason: str = ""

    def __post_init__(self) -> None:
        if self.kind is VerdictKind.PERMIT_WITH_CONDITIONS and not self.conditions:
            raise ValidationError("permit_with_conditions requires at least one condition")
        if self.kind is VerdictKind.DENY and not self.reason:
            raise ValidationError("deny requires a non-empty reason")


@dataclass(frozen=True)
class AuditEntry:
    regulation_id: str
    regulation_version: str
    provision: str
    reasoning: str
    adapter_id: str
    timestamp: str

    def __post_init__(self) -> None:
        for name in ("regulation_id", "regulation_version", "provision",
                     "reasoning", "adapter_id", "timestamp"):
            if not getattr(self, name):
                raise ValidationError(f"audit entry field {name} must be non-empty")


_OPS = {"eq", "ne", "lt", "le", "gt", "ge", "present", "absent"}


@dataclass(frozen=True)
class Clause:
    key: str
    op: str
    value: ContextValue | None = None

    def matches(self, op: DataOperation) -> bool:
        if self.key == "op_kind":
            actual: ContextValue | None = op.op_kind.value
        else:
            actual = op.context.get(self.key)
        if self.op == "present":
            return actual is not None
        if self.op == "absent":
            return actual is None
        if actual is None:
            return False
        if self.op == "eq":
            return actual == self.value
        if self.op == "ne":
            return actual != self.value
        try:
            a, b = float(actual), float(self.value)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            return False
        return {"lt": a < b, "le": a <= b, "gt": a > b, "ge": a >= b}[self.op]


@dataclass(frozen=True)
class Rule:
    when: tuple[Clause, ...]
    verdict: Verdict
    provision: str

    def matches(self, op: DataOperation) -> bool:
        return all(clause.matches(op) for clause in self.when)


@dataclass(frozen=True)
class AdapterRuleSet:
    adapter_id: str
    jurisdiction_tag: str
    regulation_id: str
    regulation_version: str
    rules: tuple[Rule, ...]


def _parse_clause(data: Mapping[str, Any]) -> Clause:
    try:
        key, op = data["key"], data["op"]
    except KeyError as exc:
        raise ValidationError(f"rule clause missing {exc.args[0]!r}") from None
    if op not in _OPS:
        raise ValidationError(f"unknown clause operator {op!r}")
    if op in ("present", "absent"):
        return Clause(key=key, op=op)
    if "value" not in data:
        raise ValidationError(f"clause on {key!r} with op {op!r} requires a value")
    return Clause(key=key, op=op, value=data["value"])


def adapter_from_dict(data: Mapping[str, Any]) -> AdapterRuleSet:
    rules: list[Rule] = []
    for raw in data["rules"]:
        clauses = tuple(_parse_clause(c) for c in raw.get("when", ()))
        kind = VerdictKind(raw["verdict"])
        rules.append(Rule(
            when=clauses,
            verdict=Verdict(
                kind=kind,
                conditions=tuple(raw.get("conditions", ())),
                reason=raw.get("reason", ""),
            ),
            provision=raw["provision"],
        ))
    if not rules or rules[-1].when:
        raise ValidationError(
            f"adapter {data.get('adapter_id')!r}: rule set must end with an "
            "unconditional default rule"
        )
    return AdapterRuleSet(
        adapter_id=data["adapter_id"],
        jurisdiction_tag=data["jurisdiction"],
        regulation_id=data["regulation_id"],
        regulation_version=data["regulation_version"],
        rules=tuple(rules),
    )


def load_adapter(path: str | Path) -> AdapterRuleSet:
    """Load one adapter rule file; malformed conditions fail here, at load
    time, never during evaluation."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"adapter file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"adapter file {path} is not valid JSON: {exc}") from None
    return adapter_from_dict(data)


# Deterministic placeholder used when no wall-clock timestamp is supplied,
# so identical evaluations serialize identically.
EPOCH_TIMESTAMP = "1970-01-01T00:00:00+00:00"


def evaluate(
    adapter: AdapterRuleSet,
    op: DataOperation,
    now: datetime | None = None,
) -> tuple[Verdict, AuditEntry]:
    """First matching rule fires; the audit entry cites its provision."""
    timestamp = EPOCH_TIMESTAMP if now is None else now.isoformat()
    for rule in adapter.rules:
        if rule.matches(op):
            verdict = rule.verdict
            if verdict.kind is VerdictKind.DENY:
                reasoning = f"denied: {verdict.reason}"
            elif verdict.kind is VerdictKind.PERMIT_WITH_CONDITIONS:
                reasoning = "permitted subject to: " + "; ".join(verdict.conditions)
            else:
                reasoning = "permitted with no applicable restriction"
            return verdict, AuditEntry(
                regulation_id=adapter.regulation_id,
                regulation_version=adapter.regulation_version,
                provision=rule.provision,
                reasoning=f"{op.op_kind.value}: {reasoning}",
                adapter_id=adapter.adapter_id,
                timestamp=timestamp,
            )
    raise ValidationError(f"adapter {adapter.adapter_id!r} rule set is not total")


def compose(
    adapters: Sequence[AdapterRuleSet],
    op: DataOperation,
    now: datetime | None = None,
) -> tuple[Verdict, list[AuditEntry]]:
    """Evaluate every adapter and keep the most restrictive verdict.

    All adapters run even after a deny so each contributes exactly one audit
    entry. Conditions from all conditional permits are concatenated in
    adapter order with duplicates removed; conflicting conditions are not
    resolved here, only surfaced together.
    """
    if not adapters:
        raise ValidationError("compose requires at least one adapter")
    verdicts: list[Verdict] = []
    audit: list[AuditEntry] = []
    for adapter in adapters:
        verdict, entry = evaluate(adapter, op, now=now)
        verdicts.append(verdict)
        audit.append(entry)
    worst = max(RESTRICTIVENESS[v.kind] for v in verdicts)
    if worst == RESTRICTIVENESS[VerdictKind.DENY]:
        first_deny = next(v for v in verdicts if v.kind is VerdictKind.DENY)
        return Verdict(kind=VerdictKind.DENY, reason=first_deny.reason), audit
    if worst == RESTRICTIVENESS[VerdictKind.PERMIT_WITH_CONDITIONS]:
        conditions: list[str] = []
        contributing = 0
        for verdict in verdicts:
            if verdict.conditions:
                contributing += 1
            for condition in verdict.conditions:
                if condition not in conditions:
                    conditions.append(condition)
        note = ""
        if contributing > 1:
            note = (
                "conditions from multiple adapters concatenated; "
                "potential conflicts flagged, not resolved"
            )
        return Verdict(
            kind=VerdictKind.PERMIT_WITH_CONDITIONS,
            conditions=tuple(conditions),
            reason=note,
        ), audit
    return Verdict(kind=VerdictKind.PERMIT), audit


def verdict_to_dict(verdict: Verdict) -> dict[str, Any]:
    return {
        "kind": verdict.kind.value,
        "conditions": list(verdict.conditions),
        "reason": verdict.reason,
    }


def audit_to_dict(entry: AuditEntry) -> dict[str, Any]:
    return {
        "regulation_id": entry.regulation_id,
        "regulation_version": entry.regulation_version,
        "provision": entry.provision,
        "reasoning": entry.reasoning,
        "adapter_id": entry.adapter_id,
        "timestamp": entry.timestamp,
    }


def write_decision(
    verdict: Verdict, audit: Sequence[AuditEntry], path: str | Path
) -> None:
    payload = {
        "verdict": verdict_to_dict(verdict),
        "audit_trail": [audit_to_dict(entry) for entry in audit],
    }
    Path(path).write_text(canonical_dumps(payload), encoding="utf-8")
