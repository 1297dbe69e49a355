"""Simulated client fleet: proposal generation, rate schedules, admission throttling.

Also owns the client configuration file the controllers rewrite between
steps (per-org rate multipliers and the active contract variant).
"""

from __future__ import annotations

import configparser
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np

from .contracts import ContractCall, Function, Variant, generator_key, music_key

ORGS = ("Org1", "Org2")
ADMISSION_LEVELS = (1.0, 0.6, 0.4)  # unchanged, -40 %, -60 %


@dataclass(frozen=True)
class ClientSpec:
    client_id: str
    org_id: str
    base_rate: float

    def __post_init__(self):
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")


def default_clients(total_rate: float = 400.0, n_clients: int = 10) -> list[ClientSpec]:
    """``n_clients`` equal clients, first half Org1, second half Org2."""
    half = n_clients // 2
    return [ClientSpec(f"client{i}", ORGS[0] if i < half else ORGS[1], total_rate / n_clients)
            for i in range(n_clients)]


@dataclass(frozen=True)
class RateSchedule:
    """Total send rate cycling through ``rates`` every ``phase_length`` steps."""

    phase_length: int = 100
    rates: tuple = (300.0, 500.0)

    def __post_init__(self):
        if self.phase_length <= 0 or not self.rates or any(r <= 0 for r in self.rates):
            raise ValueError("invalid rate schedule")

    def phase(self, step: int) -> int:
        return (step // self.phase_length) % len(self.rates)

    def rate_at(self, step: int) -> float:
        return float(self.rates[self.phase(step)])


@dataclass(frozen=True)
class AdmissionPolicy:
    multipliers: tuple = (("Org1", 1.0), ("Org2", 1.0))

    def __post_init__(self):
        for _, m in self.multipliers:
            if m not in ADMISSION_LEVELS:
                raise ValueError(f"admission multiplier {m} not in {ADMISSION_LEVELS}")

    @classmethod
    def of(cls, **per_org: float) -> "AdmissionPolicy":
        base = {org: 1.0 for org in ORGS}
        base.update(per_org)
        return cls(tuple(sorted(base.items())))

    def multiplier(self, org_id: str) -> float:
        return dict(self.multipliers).get(org_id, 1.0)


@dataclass(frozen=True)
class Update:
    """Single-key updates with no dependencies.

    Keys are drawn without replacement within a step (uniform marginals), so
    transactions of one step never touch the same key.
    """

    n_keys: int = 10_000


@dataclass(frozen=True)
class SkewedUpdate:
    """Updates where a share ``hot_prob`` of proposals hits a small hot set.

    The hot set (the first ``hot_keys`` keys) is shared by both orgs, so their
    transactions collide.
    """

    n_keys: int = 10_000
    hot_keys: int = 50
    hot_prob: float = 0.5


@dataclass(frozen=True)
class MusicOscillating:
    """PlayMusic in update phases, CalculateRevenue in compute phases.

    Songs are drawn uniformly from the ``popular`` most played ones.
    """

    update_phase: int = 100
    compute_phase: int = 100
    popular: int = 16
    first: str = "update"

    def mode(self, step: int) -> str:
        cycle = self.update_phase + self.compute_phase
        pos = step % cycle
        first_len = self.update_phase if self.first == "update" else self.compute_phase
        other = "compute" if self.first == "update" else "update"
        return self.first if pos < first_len else other


WorkloadKind = Union[Update, SkewedUpdate, MusicOscillating]


class Proposal(NamedTuple):
    client: ClientSpec
    call: ContractCall
    submit_time: float


def _count(expected: float, rng: np.random.Generator) -> int:
    # unbiased stochastic rounding
    base = int(np.floor(expected))
    return base + int(rng.random() < expected - base)


def client_rate(client: ClientSpec, clients_total: float, schedule: Optional[RateSchedule], step: int) -> float:
    if schedule is None:
        return client.base_rate
    return schedule.rate_at(step) * client.base_rate / clients_total


def generate_step(kind: WorkloadKind, step: int, clients: list[ClientSpec], schedule: Optional[RateSchedule],
                  policy: Optional[AdmissionPolicy], step_duration: float, rng: np.random.Generator, *,
                  start: float = 0.0, variant: Variant = Variant.VANILLA) -> list[Proposal]:
    """Proposals of one learning step, sorted by submit time.

    Each client sends ``rate * admission multiplier * step_duration``
    proposals (stochastically rounded) at uniform random times in
    ``[start, start + step_duration)``. With a schedule, the scheduled total
    rate is split among clients in proportion to their base rates.
    """
    if step < 0 or not step_duration > 0:
        raise ValueError("step must be >= 0 and step_duration > 0")
    total_base = sum(c.base_rate for c in clients)
    per_client = []
    for c in clients:
        rate = client_rate(c, total_base, schedule, step)
        if policy is not None:
            rate *= policy.multiplier(c.org_id)
        n = _count(rate * step_duration, rng)
        times = start + rng.random(n) * step_duration
        per_client.append((c, times))

    n_total = sum(len(t) for _, t in per_client)
    if isinstance(kind, Update):
        reps = -(-n_total // kind.n_keys) if n_total else 0
        pool = np.concatenate([rng.permutation(kind.n_keys) for _ in range(reps)]) if reps else np.empty(0, int)
        idx = pool[:n_total]
    elif isinstance(kind, SkewedUpdate):
        hot = rng.random(n_total) < kind.hot_prob
        idx = np.where(hot, rng.integers(0, kind.hot_keys, n_total),
                       kind.hot_keys + rng.integers(0, kind.n_keys - kind.hot_keys, n_total))
    elif isinstance(kind, MusicOscillating):
        idx = rng.integers(0, kind.popular, n_total)
    else:
        raise TypeError(f"unknown workload {kind!r}")

    out: list[Proposal] = []
    pos = 0
    idx = idx.tolist()
    if isinstance(kind, MusicOscillating):
        fn = Function.PLAY_MUSIC if kind.mode(step) == "update" else Function.CALCULATE_REVENUE
        for c, times in per_client:
            for t in times.tolist():
                out.append(Proposal(c, ContractCall(fn, music_key(idx[pos]), Variant(variant)), t))
                pos += 1
    else:
        for c, times in per_client:
            for t in times.tolist():
                out.append(Proposal(c, ContractCall(Function.GENERATOR_UPDATE, generator_key(idx[pos])), t))
                pos += 1
    out.sort(key=lambda p: p.submit_time)
    return out


def fairness_scenario(hot_keys: int = 50, hot_prob: float = 0.5) -> tuple[list[ClientSpec], SkewedUpdate]:
    """Five fast Org1 clients (250 TPS each) against five slow Org2 clients (100 TPS)."""
    clients = [ClientSpec(f"org1-client{i}", "Org1", 250.0) for i in range(5)]
    clients += [ClientSpec(f"org2-client{i}", "Org2", 100.0) for i in range(5)]
    return clients, SkewedUpdate(hot_keys=hot_keys, hot_prob=hot_prob)


def offered_load(clients: list[ClientSpec], policy: Optional[AdmissionPolicy] = None) -> float:
    return sum(c.base_rate * (policy.multiplier(c.org_id) if policy else 1.0) for c in clients)


# client configuration file --------------------------------------------------

@dataclass
class ClientConfig:
    admission: dict = field(default_factory=lambda: {org: 1.0 for org in ORGS})
    variant: Variant = Variant.VANILLA

    @property
    def policy(self) -> AdmissionPolicy:
        return AdmissionPolicy.of(**self.admission)

    def to_ini(self) -> str:
        lines = ["[admission]"]
        lines += [f"{org} = {float(m)!r}" for org, m in sorted(self.admission.items())]
        lines += ["", "[contract]", f"variant = {self.variant.name.lower()}", ""]
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str) -> "ClientConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        admission = {org: float(v) for org, v in cp["admission"].items()} if cp.has_section("admission") else {}
        cfg = cls()
        cfg.admission.update(admission)
        if cp.has_option("contract", "variant"):
            raw = cp.get("contract", "variant").strip().lower()
            cfg.variant = Variant(int(raw)) if raw.isdigit() else Variant[raw.upper()]
        AdmissionPolicy.of(**cfg.admission)
        return cfg

    def save(self, path: Union[str, Path]) -> None:
        """Atomic write: temp file in the same directory, then rename."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(self.to_ini())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClientConfig":
        return cls.from_ini(Path(path).read_text())
