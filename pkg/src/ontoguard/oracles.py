"""Independent brute-force oracles used to cross-check pipeline results.

Everything here is implemented naively (direct summation, full recounts)
and on purpose shares no code with the modules it checks. Performance is a
non-goal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence


@dataclass(frozen=True)
class OracleResult:
    oracle_name: str
    expected: float
    observed: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.expected - self.observed) <= self.tolerance


def jsd_oracle(p: Sequence[float], q: Sequence[float]) -> float:
    """Base-2 Jensen-Shannon divergence by direct summation.

    Raises:
        ValueError: if either input is not a probability distribution
            (negative entries or mass not summing to 1 within 1e-6).
    """
    if len(p) != len(q):
        raise ValueError(f"length mismatch: {len(p)} vs {len(q)}")
    for name, dist in (("p", p), ("q", q)):
        if any(x < 0 for x in dist):
            raise ValueError(f"{name} has negative entries")
        if abs(sum(dist) - 1.0) > 1e-6:
            raise ValueError(f"{name} is not normalized (sum={sum(dist)})")
    total = 0.0
    for pi, qi in zip(p, q):
        m = 0.5 * (pi + qi)
        if pi > 0.0:
            total += 0.5 * pi * math.log2(pi / m)
        if qi > 0.0:
            total += 0.5 * qi * math.log2(qi / m)
    return total


def partition_oracle(
    input_ids: Sequence[str],
    accepted_ids: Sequence[str],
    reconciled_ids: Sequence[str],
    quarantined_ids: Sequence[str],
) -> bool:
    """Recount that a gate outcome partitions its input: every input record
    lands in exactly one bucket and nothing else appears."""
    combined = sorted(list(accepted_ids) + list(reconciled_ids) + list(quarantined_ids))
    return combined == sorted(input_ids)


def partition_oracle_files(
    input_path: str | Path,
    accepted_path: str | Path,
    reconciled_path: str | Path,
    quarantine_path: str | Path,
) -> bool:
    """File-level variant of :func:`partition_oracle`, recounting raw JSONL."""
    def ids(path: str | Path, key: str = "record_id") -> list[str]:
        out: list[str] = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if key not in data and "record" in data:
                data = data["record"]
            out.append(data["record_id"])
        return out

    return partition_oracle(
        ids(input_path), ids(accepted_path), ids(reconciled_path), ids(quarantine_path)
    )


def binomial_interval(n: int, p: float, coverage: float = 0.99) -> tuple[int, int]:
    """Central coverage interval of Binomial(n, p), by direct summation."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0,1], got {p}")
    tail = (1.0 - coverage) / 2.0
    # log-pmf recurrence keeps this stable for large n
    log_pmf = [0.0] * (n + 1)
    if p in (0.0, 1.0):
        k = 0 if p == 0.0 else n
        return k, k
    log_pmf[0] = n * math.log1p(-p)
    for k in range(1, n + 1):
        log_pmf[k] = log_pmf[k - 1] + math.log(n - k + 1) - math.log(k) \
            + math.log(p) - math.log1p(-p)
    cdf = 0.0
    lo = 0
    for k in range(n + 1):
        cdf += math.exp(log_pmf[k])
        if cdf >= tail:
            lo = k
            break
    cdf = 0.0
    hi = n
    for k in range(n, -1, -1):
        cdf += math.exp(log_pmf[k])
        if cdf >= tail:
            hi = k
            break
    return lo, hi


def prevalence_recount(records: Sequence[Any], code: str) -> float:
    """Fraction of records whose primary code equals ``code``, recounted
    directly from the record objects."""
    if not records:
        return 0.0
    hits = sum(1 for r in records if r.primary_code == code)
    return hits / len(records)


def accuracy_recount(pairs: Sequence[tuple[str, str]]) -> float:
    """Fraction of (predicted, truth) pairs that agree."""
    if not pairs:
        return 0.0
    return sum(1 for a, b in pairs if a == b) / len(pairs)
