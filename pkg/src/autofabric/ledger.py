"""Versioned world state, transactions, blocks and VSCC/MVCC block validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, NamedTuple, Optional

from .errors import SequenceGap


class Version(NamedTuple):
    """Key version, ordered by (block_seq, tx_index)."""

    block_seq: int
    tx_index: int


class TxStatus(str, Enum):
    COMMITTED = "Committed"
    ABORTED_MVCC = "AbortedMVCC"
    ABORTED_VSCC = "AbortedVSCC"
    DROPPED = "Dropped"


class CutReason(str, Enum):
    MSG_COUNT = "MsgCount"
    BYTES = "Bytes"
    TIMEOUT = "Timeout"
    CONFIG_FLUSH = "ConfigFlush"


def value_size(value: Any) -> int:
    """Serialized size in bytes of a stored value."""
    t = type(value)
    if t is bytes or t is str:
        return len(value)
    if isinstance(value, (bytes, bytearray, str)):
        return len(value)
    if isinstance(value, (int, float)):
        return 8
    size = getattr(value, "size_bytes", None)
    if size is not None:
        return int(size)
    return len(repr(value))


@dataclass(slots=True, eq=False)
class Transaction:
    """A proposal and its lifecycle.

    Timestamps are integer microseconds of simulated time, ``None`` until the
    phase completes: ``t_endorsed`` is arrival at the orderer, ``t_cut`` the
    block cut, ``t_ordered`` the end of ordering, ``t_validating`` the start
    of the block's validation and ``t_committed`` its end (set for aborted
    transactions too).
    """

    tx_id: str
    client_id: str = ""
    org_id: str = ""
    kind: str = ""
    read_set: dict = field(default_factory=dict)
    write_set: dict = field(default_factory=dict)
    endorsement_count: int = 2
    size_bytes: int = 1
    call: Any = None
    is_config: bool = False
    endorse_delay: int = 0
    t_submitted: Optional[int] = None
    t_endorsed: Optional[int] = None
    t_cut: Optional[int] = None
    t_ordered: Optional[int] = None
    t_validating: Optional[int] = None
    t_committed: Optional[int] = None

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")

    @property
    def latency(self) -> Optional[float]:
        if self.t_committed is None or self.t_submitted is None:
            return None
        return (self.t_committed - self.t_submitted) / 1e6


@dataclass(slots=True, eq=False)
class Block:
    seq: int
    txs: list
    cut_reason: CutReason
    byte_size: int = 0

    def __post_init__(self):
        if not self.byte_size:
            self.byte_size = sum(tx.size_bytes for tx in self.txs)


class WorldState:
    """Key -> (value, version) map with an incrementally maintained byte total.

    ``next_seq`` is the sequence number the next validated block must carry.
    """

    __slots__ = ("_entries", "total_bytes", "next_seq")

    def __init__(self, entries: Optional[Mapping[str, tuple]] = None, next_seq: int = 0):
        self._entries: dict[str, tuple] = {}
        self.total_bytes = 0
        self.next_seq = next_seq
        for key, (value, version) in (entries or {}).items():
            self._put(key, value, Version(*version))

    @classmethod
    def genesis(cls, values: Mapping[str, Any]) -> "WorldState":
        """State after block 0 wrote ``values`` (tx_index = insertion order)."""
        state = cls(next_seq=1)
        for i, (key, value) in enumerate(values.items()):
            state._put(key, value, Version(0, i))
        return state

    def _put(self, key: str, value: Any, version: Version) -> None:
        if not key:
            raise ValueError("empty key")
        size = len(key) + value_size(value)
        old = self._entries.get(key)
        if old is not None:
            self.total_bytes -= old[2]
        self._entries[key] = (value, version, size)
        self.total_bytes += size

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self):
        return self._entries.keys()

    def get(self, key: str) -> Optional[tuple]:
        """(value, version) or None."""
        e = self._entries.get(key)
        return None if e is None else (e[0], e[1])

    def value(self, key: str) -> Any:
        return self._entries[key][0]

    def version(self, key: str) -> Optional[Version]:
        e = self._entries.get(key)
        return None if e is None else e[1]

    def versions(self) -> dict[str, Version]:
        return {k: e[1] for k, e in self._entries.items()}

    def entry_size(self, key: str) -> int:
        return self._entries[key][2]

    def copy(self) -> "WorldState":
        new = WorldState.__new__(WorldState)
        new._entries = dict(self._entries)
        new.total_bytes = self.total_bytes
        new.next_seq = self.next_seq
        return new

    # validation ---------------------------------------------------------

    def check_block(self, block: Block, policy: int) -> list[TxStatus]:
        """Statuses for ``block`` against this state, without mutating it.

        Earlier committed transactions in the block are visible to later
        ones through an overlay of pending versions.
        """
        if block.seq != self.next_seq:
            raise SequenceGap(f"expected block {self.next_seq}, got {block.seq}")
        entries = self._entries
        overlay: dict[str, Version] = {}
        statuses = []
        seq = block.seq
        for idx, tx in enumerate(block.txs):
            if tx.endorsement_count < policy:
                statuses.append(TxStatus.ABORTED_VSCC)
                continue
            ok = True
            for key, ver in tx.read_set.items():
                cur = overlay.get(key)
                if cur is None:
                    e = entries.get(key)
                    cur = None if e is None else e[1]
                if cur != ver:
                    ok = False
                    break
            if not ok:
                statuses.append(TxStatus.ABORTED_MVCC)
                continue
            statuses.append(TxStatus.COMMITTED)
            if tx.write_set:
                v = Version(seq, idx)
                for key in tx.write_set:
                    overlay[key] = v
        return statuses

    def apply_block(self, block: Block, statuses: Iterable[TxStatus]) -> int:
        """Apply committed write sets in place; returns the number of writes."""
        writes = 0
        seq = block.seq
        for idx, (tx, status) in enumerate(zip(block.txs, statuses)):
            if status is not TxStatus.COMMITTED or not tx.write_set:
                continue
            v = Version(seq, idx)
            for key, value in tx.write_set.items():
                self._put(key, value, v)
                writes += 1
        self.next_seq = seq + 1
        return writes


def validate_block(state: WorldState, block: Block, policy: int) -> tuple[WorldState, list[tuple[str, TxStatus]]]:
    """Validate ``block`` in order (VSCC count check, then MVCC read versions).

    Returns a new state with all committed writes applied; ``state`` is left
    untouched.
    """
    statuses = state.check_block(block, policy)
    new = state.copy()
    new.apply_block(block, statuses)
    return new, [(tx.tx_id, s) for tx, s in zip(block.txs, statuses)]


def serial_oracle(versions: Mapping[str, Version], txs: Iterable, policy: int, block_seq: int) -> list[TxStatus]:
    """Reference validator: re-executes transactions one at a time.

    Each transaction is checked against a fresh copy of the version map that
    includes every earlier committed write. Works on anything exposing
    ``read_set``, ``write_set`` (or an iterable of written keys) and
    ``endorsement_count``.
    """
    current = dict(versions)
    out = []
    for idx, tx in enumerate(txs):
        snapshot = dict(current)
        if tx.endorsement_count < policy:
            out.append(TxStatus.ABORTED_VSCC)
            continue
        stale = [k for k, v in tx.read_set.items()
                 if snapshot.get(k) != (None if v is None else tuple(v))]
        if stale:
            out.append(TxStatus.ABORTED_MVCC)
            continue
        for key in tx.write_set:
            snapshot[key] = Version(block_seq, idx)
        current = snapshot
        out.append(TxStatus.COMMITTED)
    return out
