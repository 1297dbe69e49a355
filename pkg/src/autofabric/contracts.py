"""Generator and music-management chaincode, each call producing read/write sets.

The music contract has two implementations of every function. ``Vanilla``
read-modify-writes the song record; ``Delta`` turns PlayMusic into a
write-only append keyed by transaction id and pays for it in
CalculateRevenue, whose aggregation is simulated by a fixed delay.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Callable, NamedTuple

from .errors import MissingKey, UnknownFunction
from .ledger import WorldState

REVENUE_PER_PLAY = 1
AGGREGATION_DELAY = 0.5  # seconds
DEFAULT_PAYLOAD_BYTES = 200


class Function(str, Enum):
    GENERATOR_UPDATE = "GeneratorUpdate"
    PLAY_MUSIC = "PlayMusic"
    CALCULATE_REVENUE = "CalculateRevenue"


class Variant(IntEnum):
    VANILLA = 0
    DELTA = 1


@dataclass(frozen=True, slots=True)
class ContractCall:
    function: Function
    target_key: str
    variant: Variant = Variant.VANILLA

    @property
    def tag(self) -> str:
        if self.function is Function.GENERATOR_UPDATE:
            return self.function.value
        return f"{self.function.value}{self.variant.name.title()}"


@dataclass(frozen=True, slots=True)
class MusicRecord:
    music_id: str
    play_count: int = 0
    total_revenue: float = 0.0

    size_bytes = 24


class Endorsement(NamedTuple):
    read_set: dict
    write_set: dict
    compute_delay: float


def delta_key(music_id: str, tx_id: str, increment: int = 1) -> str:
    """Composite key musicID + operation + value + txID, e.g. ``M01+1T01``."""
    return f"{music_id}+{increment}{tx_id}"


def _read(state: WorldState, key: str):
    entry = state.get(key)
    if entry is None:
        raise MissingKey(key)
    return entry


def _generator_update(call, state, tx_id, payload_bytes):
    _, version = _read(state, call.target_key)
    new_value = tx_id.encode().ljust(payload_bytes, b".")[:payload_bytes]
    return Endorsement({call.target_key: version}, {call.target_key: new_value}, 0.0)


def _play_vanilla(call, state, tx_id, payload_bytes):
    record, version = _read(state, call.target_key)
    updated = replace(record, play_count=record.play_count + 1)
    return Endorsement({call.target_key: version}, {call.target_key: updated}, 0.0)


def _play_delta(call, state, tx_id, payload_bytes):
    return Endorsement({}, {delta_key(call.target_key, tx_id): 1}, 0.0)


def _revenue(record: MusicRecord) -> MusicRecord:
    return replace(record, total_revenue=record.play_count * REVENUE_PER_PLAY)


def _revenue_vanilla(call, state, tx_id, payload_bytes):
    record, version = _read(state, call.target_key)
    return Endorsement({call.target_key: version}, {call.target_key: _revenue(record)}, 0.0)


def _revenue_delta(call, state, tx_id, payload_bytes):
    # delta entries are never folded back; only the aggregation cost is paid
    record, version = _read(state, call.target_key)
    return Endorsement({call.target_key: version}, {call.target_key: _revenue(record)}, AGGREGATION_DELAY)


Handler = Callable[[ContractCall, WorldState, str, int], Endorsement]

REGISTRY: dict[tuple[Function, Variant | None], Handler] = {
    (Function.GENERATOR_UPDATE, None): _generator_update,
    (Function.PLAY_MUSIC, Variant.VANILLA): _play_vanilla,
    (Function.PLAY_MUSIC, Variant.DELTA): _play_delta,
    (Function.CALCULATE_REVENUE, Variant.VANILLA): _revenue_vanilla,
    (Function.CALCULATE_REVENUE, Variant.DELTA): _revenue_delta,
}


def exec_contract(call: ContractCall, state: WorldState, tx_id: str,
                  payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> Endorsement:
    """Simulate ``call`` on ``state`` (not mutated) and return its read/write sets."""
    if call.function is Function.GENERATOR_UPDATE:
        return _generator_update(call, state, tx_id, payload_bytes)
    variant = call.variant
    try:
        handler = REGISTRY[(call.function, variant)]
    except (KeyError, TypeError):
        raise UnknownFunction(f"{call.function!r}/{call.variant!r}") from None
    return handler(call, state, tx_id, payload_bytes)


endorse = exec_contract


def generator_genesis(n_keys: int = 10_000, payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> dict:
    return {generator_key(i): b"\0" * payload_bytes for i in range(n_keys)}


def music_genesis(n_songs: int = 10_000) -> dict:
    return {music_key(i): MusicRecord(music_key(i)) for i in range(n_songs)}


def generator_key(i: int) -> str:
    return f"k{i:05d}"


def music_key(i: int) -> str:
    return f"M{i:05d}"
