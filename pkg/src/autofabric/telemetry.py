"""Per-step metrics (the monitoring side of the control loop) and Jain's index."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .errors import FairnessUndefined
from .ledger import TxStatus

ORG1, ORG2 = "Org1", "Org2"


def jain_index(s1: float, s2: float) -> float:
    """Two-party Jain fairness: (s1 + s2)^2 / (2 (s1^2 + s2^2))."""
    if s1 < 0 or s2 < 0:
        raise ValueError("shares must be non-negative")
    top = max(s1, s2)
    if top == 0:
        raise FairnessUndefined("both shares are zero")
    a, b = s1 / top, s2 / top  # normalized so tiny shares cannot underflow
    return (a + b) ** 2 / (2.0 * (a * a + b * b))


@dataclass
class StepMetrics:
    overall_tps: float = 0.0
    success_tps: float = 0.0
    avg_latency: float = 0.0
    send_rate: float = 0.0
    committed: int = 0
    aborted_mvcc: int = 0
    aborted_vscc: int = 0
    dropped: int = 0
    per_client_success: dict = field(default_factory=dict)
    per_client_success_rate: dict = field(default_factory=dict)
    per_org_success: dict = field(default_factory=dict)
    jain: float = 0.5

    @property
    def validated(self) -> int:
        return self.committed + self.aborted_mvcc + self.aborted_vscc

    @property
    def org1_success(self) -> int:
        return self.per_org_success.get(ORG1, 0)

    @property
    def org2_success(self) -> int:
        return self.per_org_success.get(ORG2, 0)


def collect(trace: Iterable, offered: Union[int, Mapping[str, int]], step_duration: float, *,
            elapsed: Optional[float] = None, previous_jain: float = 0.5) -> StepMetrics:
    """Reduce a step's transaction outcomes to :class:`StepMetrics`.

    ``trace`` holds outcome records with ``client_id``, ``org_id``, ``status``
    and ``latency`` (see ``chainsim.TxOutcome``). Send rate is
    ``offered / step_duration``; throughputs divide by ``elapsed`` when the
    measurement window outlasts the sending window (defaults to
    ``step_duration``). When neither org committed anything, Jain's index
    falls back to ``previous_jain``.
    """
    if not step_duration > 0:
        raise ValueError("step_duration must be positive")
    window = step_duration if elapsed is None else elapsed
    if not window > 0:
        raise ValueError("elapsed must be positive")

    counts = Counter()
    client_ok: Counter = Counter()
    org_ok: Counter = Counter({ORG1: 0, ORG2: 0})
    lat_sum = 0.0
    for rec in trace:
        counts[rec.status] += 1
        if rec.status is TxStatus.COMMITTED:
            lat_sum += rec.latency
            if rec.client_id and not getattr(rec, "is_config", False):
                client_ok[rec.client_id] += 1
                org_ok[rec.org_id] += 1

    committed = counts[TxStatus.COMMITTED]
    validated = committed + counts[TxStatus.ABORTED_MVCC] + counts[TxStatus.ABORTED_VSCC]
    if isinstance(offered, Mapping):
        total_offered = sum(offered.values())
        rates = {c: (client_ok[c] / n if n else 0.0) for c, n in offered.items()}
    else:
        total_offered = offered
        rates = {}
    try:
        jain = jain_index(org_ok[ORG1], org_ok[ORG2])
    except FairnessUndefined:
        jain = previous_jain

    return StepMetrics(
        overall_tps=validated / window,
        success_tps=committed / window,
        avg_latency=lat_sum / committed if committed else 0.0,
        send_rate=total_offered / step_duration,
        committed=committed,
        aborted_mvcc=counts[TxStatus.ABORTED_MVCC],
        aborted_vscc=counts[TxStatus.ABORTED_VSCC],
        dropped=counts[TxStatus.DROPPED],
        per_client_success=dict(client_ok),
        per_client_success_rate=rates,
        per_org_success=dict(org_ok),
        jain=jain,
    )
