"""Deterministic discrete-event model of the execute-order-validate pipeline.

Proposals are endorsed against the committed world state at submission,
reach the orderer's FIFO pool, are cut into blocks by the four orderer knobs,
ordered by a single consensus stage and validated by a single peer stage.
Ordering never waits on validation, so a slow peer builds a block backlog
while a slow orderer fills the pool (and eventually drops).

All internal times are integer microseconds; events are processed in strict
``(time, seq_no)`` order, so identical inputs replay bit-identically.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Any, Callable, IO, NamedTuple, Optional, Sequence

from .contracts import ContractCall, exec_contract, generator_genesis
from .errors import InvalidConfig
from .ledger import Block, CutReason, Transaction, TxStatus, WorldState, value_size

MB = 1024 * 1024
CONFIG_KEY = "__orderer_config__"


def us(seconds: float) -> int:
    return int(round(seconds * 1_000_000))


@dataclass(frozen=True)
class OrdererConfig:
    """Block formation knobs. Byte sizes are in MiB, as in Fabric's configtx."""

    max_message_count: int = 500
    preferred_max_bytes: float = 2.0
    batch_timeout: float = 2.0
    snapshot_interval: float = 16.0

    size_bytes = 32

    def validate(self) -> "OrdererConfig":
        for name, value in asdict(self).items():
            if not value > 0:
                raise InvalidConfig(f"{name} must be positive, got {value!r}")
        if int(self.max_message_count) != self.max_message_count:
            raise InvalidConfig("max_message_count must be an integer")
        return self

    @property
    def preferred_max_bytes_b(self) -> int:
        return int(self.preferred_max_bytes * MB)

    @property
    def snapshot_interval_b(self) -> int:
        return int(self.snapshot_interval * MB)

    def as_tuple(self) -> tuple:
        return (self.max_message_count, self.preferred_max_bytes, self.batch_timeout, self.snapshot_interval)


@dataclass(frozen=True)
class CostModel:
    """Per-phase service costs in seconds.

    Ordering a block costs ``order_per_block + order_per_tx * n``; validating
    it costs ``vscc_per_tx * n + commit_per_write * writes``; a snapshot
    stalls validation for ``snapshot_per_mb`` per MiB of world state.
    """

    endorse_base: float = 0.010
    network_hop: float = 0.005
    order_per_block: float = 0.050
    order_per_tx: float = 0.0002
    vscc_per_tx: float = 0.0005
    commit_per_write: float = 0.001
    snapshot_per_mb: float = 0.020
    orderer_queue_cap: int = 10_000
    endorser_queue_cap: int = 5_000

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        if self.orderer_queue_cap <= 0 or self.endorser_queue_cap <= 0:
            raise InvalidConfig("queue capacities must be positive")


class EventKind(IntEnum):
    SUBMIT = 0
    ENDORSE_DONE = 1
    CUT_CHECK = 2
    BLOCK_ORDERED = 3
    BLOCK_VALIDATED = 4
    SNAPSHOT_DONE = 5
    CONFIG_APPLY = 6


EVENT_NAMES = ("Submit", "EndorseDone", "CutCheck", "BlockOrdered", "BlockValidated", "SnapshotDone", "ConfigApply")


class Cut(NamedTuple):
    count: int
    reason: CutReason


class TxOutcome(NamedTuple):
    tx_id: str
    client_id: str
    org_id: str
    status: TxStatus
    latency: Optional[float]
    is_config: bool = False


def cut_block(pool: Sequence[Transaction], config: OrdererConfig, now: float, oldest_wait: float,
              *, pool_bytes: Optional[int] = None, config_pending: Optional[bool] = None) -> Optional[Cut]:
    """Decide whether the FIFO ``pool`` yields a block now.

    Returns how many leading transactions to take and why, or ``None``.
    A configuration transaction always travels alone: anything queued
    before it is flushed first. Otherwise the first of message count,
    preferred bytes (longest fitting prefix, at least one transaction) and
    batch timeout that holds decides. Times resolve to the microsecond.
    """
    n = len(pool)
    if n == 0:
        return None
    if config_pending is None or config_pending:
        for i, tx in enumerate(pool):
            if tx.is_config:
                return Cut(i or 1, CutReason.CONFIG_FLUSH)
    mc = config.max_message_count
    if n >= mc:
        return Cut(mc, CutReason.MSG_COUNT)
    limit = config.preferred_max_bytes_b
    total = sum(tx.size_bytes for tx in pool) if pool_bytes is None else pool_bytes
    if total >= limit:
        acc = k = 0
        for tx in pool:
            acc += tx.size_bytes
            if acc > limit:
                break
            k += 1
        return Cut(max(k, 1), CutReason.BYTES)
    if us(oldest_wait) >= us(config.batch_timeout):
        return Cut(n, CutReason.TIMEOUT)
    return None


_COUNT_KEY = {TxStatus.COMMITTED: "committed", TxStatus.ABORTED_MVCC: "aborted_mvcc",
              TxStatus.ABORTED_VSCC: "aborted_vscc", TxStatus.DROPPED: "dropped"}


class Simulator:
    """One simulated network: world state, orderer pool, two service stages.

    ``trace`` is an optional callable receiving one dict per processed event
    (see :class:`TraceWriter` for a newline-delimited JSON sink).
    """

    def __init__(self, config: Optional[OrdererConfig] = None, cost: Optional[CostModel] = None, *,
                 genesis: Optional[dict] = None, policy: int = 2, endorsements: int = 2,
                 payload_bytes: int = 200, tx_overhead_bytes: int = 3800,
                 trace: Optional[Callable[[dict], Any]] = None):
        self.config = (config or OrdererConfig()).validate()
        self.cost = cost or CostModel()
        self.policy = policy
        self.endorsements = endorsements
        self.payload_bytes = payload_bytes
        self.tx_overhead_bytes = tx_overhead_bytes
        self.world = WorldState.genesis(generator_genesis() if genesis is None else genesis)
        self.trace = trace

        c = self.cost
        self._endorse_us = us(c.endorse_base) + us(c.network_hop)
        self._ob_us = us(c.order_per_block)
        self._op_us = us(c.order_per_tx)
        self._vscc_us = us(c.vscc_per_tx)
        self._commit_us = us(c.commit_per_write)
        self._apply_config_timing()

        self._queue: list = []
        self._seq = 0
        self._now = 0
        self.pool: deque[Transaction] = deque()
        self.pool_bytes = 0
        self._configs_in_pool = 0
        self._val_queue: deque = deque()
        self._orderer_busy = False
        self._validator_busy = False
        self._stalled = False
        self._endorsing = 0
        self.bytes_since_snapshot = 0
        self.next_block_seq = 1
        self.snapshots = 0
        self._tx_counter = 0
        self._outcomes: list[TxOutcome] = []
        self._rec: Optional[dict] = None
        self.counts = {"submitted": 0, "committed": 0, "aborted_mvcc": 0, "aborted_vscc": 0, "dropped": 0}
        self._dispatch = (self._on_submit, self._on_endorse_done, self._on_cut_check, self._on_block_ordered,
                          self._on_block_validated, self._on_snapshot_done, self._on_config_apply)
        if trace is not None:
            trace({"kind": "Genesis", "time": 0.0, "seq": -1, "policy": policy,
                   "keys": {k: list(v) for k, v in self.world.versions().items()}})

    def _apply_config_timing(self):
        self._bt_us = us(self.config.batch_timeout)
        self._pb_b = self.config.preferred_max_bytes_b
        self._si_b = self.config.snapshot_interval_b

    # public surface -------------------------------------------------------

    @property
    def clock(self) -> float:
        return self._now / 1e6

    @property
    def clock_us(self) -> int:
        return self._now

    @property
    def ledger_height(self) -> int:
        return self.world.next_seq

    @property
    def in_flight(self) -> int:
        c = self.counts
        return c["submitted"] - c["committed"] - c["aborted_mvcc"] - c["aborted_vscc"] - c["dropped"]

    def submit(self, call: ContractCall, at: float, client_id: str = "", org_id: str = "") -> str:
        """Schedule a proposal at simulated time ``at`` and return its id."""
        tx = self._new_tx(at, client_id, org_id)
        tx.call = call
        tx.kind = call.tag
        return tx.tx_id

    def propose_config(self, new_config: OrdererConfig, at: Optional[float] = None, client_id: str = "admin") -> str:
        """Send a configuration transaction; the knobs change when it commits."""
        new_config.validate()
        tx = self._new_tx(self.clock if at is None else at, client_id, "")
        tx.is_config = True
        tx.kind = "ConfigUpdate"
        tx.write_set = {CONFIG_KEY: new_config}
        return tx.tx_id

    def advance(self, until: float) -> list[TxOutcome]:
        """Process every event with time <= ``until``; the clock ends at ``until``."""
        until_us = us(until)
        if until_us < self._now:
            raise ValueError(f"cannot advance backwards to {until} (clock {self.clock})")
        q = self._queue
        while q and q[0][0] <= until_us:
            self._step()
        self._now = until_us
        return self._take_outcomes()

    def settle(self, deadline: float) -> list[TxOutcome]:
        """Run until nothing is in flight or the next event lies past ``deadline``.

        The clock stops at the last processed event, so ``clock`` is the
        settle time when everything finished.
        """
        deadline_us = us(deadline)
        q = self._queue
        while self.in_flight and q and q[0][0] <= deadline_us:
            self._step()
        while q and q[0][0] == self._now and q[0][2] != EventKind.SUBMIT:
            self._step()
        return self._take_outcomes()

    # internals ------------------------------------------------------------

    def _new_tx(self, at: float, client_id: str, org_id: str) -> Transaction:
        at_us = us(at)
        if at_us < self._now:
            raise ValueError(f"submission at {at} is before the clock ({self.clock})")
        self._tx_counter += 1
        tx = Transaction(f"T{self._tx_counter}", client_id, org_id, size_bytes=max(1, self.tx_overhead_bytes),
                         endorsement_count=self.endorsements)
        self.counts["submitted"] += 1
        self._push(at_us, EventKind.SUBMIT, tx)
        return tx

    def _push(self, t: int, kind: EventKind, payload: Any) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, payload))

    def _take_outcomes(self) -> list[TxOutcome]:
        out = self._outcomes
        self._outcomes = []
        return out

    def _step(self) -> None:
        t, seq, kind, payload = heapq.heappop(self._queue)
        self._now = t
        if self.trace is None:
            self._dispatch[kind](payload)
            return
        rec = {"time": t / 1e6, "t_us": t, "seq": seq, "kind": EVENT_NAMES[kind]}
        if isinstance(payload, Transaction):
            rec["tx"] = payload.tx_id
        elif isinstance(payload, Block):
            rec["block"] = payload.seq
        elif isinstance(payload, tuple) and payload and isinstance(payload[0], Block):
            rec["block"] = payload[0].seq
        self._rec = rec
        self._dispatch[kind](payload)
        rec["pool"] = len(self.pool)
        self.trace(rec)
        self._rec = None

    def _finish(self, tx: Transaction, status: TxStatus) -> None:
        self.counts[_COUNT_KEY[status]] += 1
        lat = None if tx.t_committed is None else (tx.t_committed - tx.t_submitted) / 1e6
        self._outcomes.append(TxOutcome(tx.tx_id, tx.client_id, tx.org_id, status, lat, tx.is_config))

    def _on_submit(self, tx: Transaction) -> None:
        now = self._now
        tx.t_submitted = now
        if self._endorsing >= self.cost.endorser_queue_cap:
            if self._rec is not None:
                self._rec["dropped"] = True
            self._finish(tx, TxStatus.DROPPED)
            return
        if tx.is_config:
            delay = self._endorse_us
            payload = sum(len(k) + value_size(v) for k, v in tx.write_set.items())
        else:
            e = exec_contract(tx.call, self.world, tx.tx_id, self.payload_bytes)
            tx.read_set = e.read_set
            tx.write_set = e.write_set
            delay = self._endorse_us + (us(e.compute_delay) if e.compute_delay else 0)
            payload = 0
            for k, v in e.write_set.items():
                payload += len(k) + value_size(v)
        tx.size_bytes = max(1, self.tx_overhead_bytes + payload)
        tx.endorse_delay = delay
        self._endorsing += 1
        if self._rec is not None:
            self._rec["delay_us"] = delay
        self._push(now + delay, EventKind.ENDORSE_DONE, tx)

    def _on_endorse_done(self, tx: Transaction) -> None:
        self._endorsing -= 1
        tx.t_endorsed = self._now
        pool = self.pool
        if len(pool) >= self.cost.orderer_queue_cap:
            if self._rec is not None:
                self._rec["dropped"] = True
            self._finish(tx, TxStatus.DROPPED)
            return
        pool.append(tx)
        self.pool_bytes += tx.size_bytes
        if tx.is_config:
            self._configs_in_pool += 1
        if len(pool) == 1:
            self._push(self._now + self._bt_us, EventKind.CUT_CHECK, None)
        self._try_cut()

    def _on_cut_check(self, _payload) -> None:
        self._try_cut()

    def _try_cut(self) -> None:
        pool = self.pool
        if self._orderer_busy or not pool:
            return
        now = self._now
        cfg = self.config
        # fast path: no cut condition can hold
        if (not self._configs_in_pool and len(pool) < cfg.max_message_count and self.pool_bytes < self._pb_b
                and now - pool[0].t_endorsed < self._bt_us):
            return
        wait = (now - pool[0].t_endorsed) / 1e6
        cut = cut_block(pool, self.config, now / 1e6, wait, pool_bytes=self.pool_bytes,
                        config_pending=self._configs_in_pool > 0)
        if cut is None:
            return
        taken = [pool.popleft() for _ in range(cut.count)]
        nbytes = 0
        for tx in taken:
            tx.t_cut = now
            nbytes += tx.size_bytes
            if tx.is_config:
                self._configs_in_pool -= 1
        self.pool_bytes -= nbytes
        block = Block(self.next_block_seq, taken, cut.reason, nbytes)
        self.next_block_seq += 1
        cost = self._ob_us + self._op_us * len(taken)
        self._orderer_busy = True
        self._push(now + cost, EventKind.BLOCK_ORDERED, block)
        if pool:
            deadline = pool[0].t_endorsed + self._bt_us
            if deadline > now:
                self._push(deadline, EventKind.CUT_CHECK, None)
        if self._rec is not None:
            self._rec["cut"] = {"block": block.seq, "n": len(taken), "reason": cut.reason.value,
                                "bytes": nbytes, "pool_before": len(pool) + len(taken), "cost_us": cost,
                                "txs": [tx.tx_id for tx in taken]}

    def _on_block_ordered(self, block: Block) -> None:
        self._orderer_busy = False
        now = self._now
        for tx in block.txs:
            tx.t_ordered = now
        self._val_queue.append(block)
        self._try_validate()
        self._try_cut()

    def _try_validate(self) -> None:
        if self._validator_busy or self._stalled or not self._val_queue:
            return
        block = self._val_queue.popleft()
        statuses = self.world.check_block(block, self.policy)
        writes = 0
        for tx, st in zip(block.txs, statuses):
            if st is TxStatus.COMMITTED:
                writes += len(tx.write_set)
        cost = self._vscc_us * len(block.txs) + self._commit_us * writes
        now = self._now
        for tx in block.txs:
            tx.t_validating = now
        self._validator_busy = True
        self._push(now + cost, EventKind.BLOCK_VALIDATED, (block, statuses))
        if self._rec is not None:
            self._rec["validate"] = {"block": block.seq, "cost_us": cost}

    def _on_block_validated(self, payload) -> None:
        block, statuses = payload
        self._validator_busy = False
        now = self._now
        self.world.apply_block(block, statuses)
        for tx, st in zip(block.txs, statuses):
            tx.t_committed = now
            self._finish(tx, st)
            if tx.is_config and st is TxStatus.COMMITTED:
                self._push(now, EventKind.CONFIG_APPLY, tx.write_set[CONFIG_KEY])
        if self._rec is not None:
            self._rec["txs"] = [{"tx": tx.tx_id, "reads": {k: list(v) for k, v in tx.read_set.items()},
                                 "writes": list(tx.write_set), "endorsements": tx.endorsement_count,
                                 "status": st.value} for tx, st in zip(block.txs, statuses)]
        self.bytes_since_snapshot += block.byte_size
        if self.bytes_since_snapshot >= self._si_b:
            stall = us(self.cost.snapshot_per_mb * self.world.total_bytes / MB)
            self.bytes_since_snapshot = 0
            self._stalled = True
            self.snapshots += 1
            self._push(now + stall, EventKind.SNAPSHOT_DONE, None)
            if self._rec is not None:
                self._rec["snapshot_us"] = stall
        else:
            self._try_validate()

    def _on_snapshot_done(self, _payload) -> None:
        self._stalled = False
        self._try_validate()

    def _on_config_apply(self, new_config: OrdererConfig) -> None:
        self.config = new_config
        self._apply_config_timing()
        if self._rec is not None:
            self._rec["config"] = list(new_config.as_tuple())
        if self.pool:
            deadline = self.pool[0].t_endorsed + self._bt_us
            if deadline > self._now:
                self._push(deadline, EventKind.CUT_CHECK, None)
        self._try_cut()


class TraceWriter:
    """Newline-delimited JSON event sink."""

    def __init__(self, fh: IO[str]):
        self.fh = fh

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, separators=(",", ":")) + "\n")
