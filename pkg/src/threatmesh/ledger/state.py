import json
from typing import Iterator, NamedTuple, Optional

from threatmesh.encoding import RecordWriter, sha256

Version = tuple[int, int]


class VersionedValue(NamedTuple):
    value: bytes
    version: Version


class WorldState:
    """Key-value map with (block number, tx index) versions. Only commit mutates it."""

    def __init__(self):
        self._data: dict[str, VersionedValue] = {}

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: str) -> Optional[VersionedValue]:
        return self._data.get(key)

    def version(self, key: str) -> Optional[Version]:
        entry = self._data.get(key)
        return entry.version if entry else None

    def put(self, key: str, value: bytes, version: Version) -> None:
        current = self._data.get(key)
        if current is not None and not current.version < version:
            raise ValueError(f"version of {key!r} must increase: {current.version} -> {version}")
        self._data[key] = VersionedValue(bytes(value), version)

    def delete(self, key: str) -> None:
        self._data.pop(key, None)

    def items(self) -> Iterator[tuple[str, VersionedValue]]:
        return iter(sorted(self._data.items()))

    def keys_with_prefix(self, prefix: str) -> list[str]:
        return sorted(k for k in self._data if k.startswith(prefix))

    def state_hash(self) -> bytes:
        w = RecordWriter()
        for key, (value, (block, tx)) in self.items():
            w.str_(key).bytes_(value).u64(block).u64(tx)
        return sha256(w.getvalue())

    def to_json(self) -> dict:
        return {key: [value.hex(), list(version)] for key, (value, version) in self.items()}

    @classmethod
    def from_json(cls, data: dict) -> "WorldState":
        state = cls()
        for key, (value_hex, (block, tx)) in data.items():
            state.put(key, bytes.fromhex(value_hex), (block, tx))
        return state


class PrivateStore:
    """
    Private collection data held by one peer.

    Every peer keeps value hashes; only peers of member organizations keep the values themselves.
    """

    def __init__(self):
        self.hashes: dict[str, WorldState] = {}
        self.values: dict[str, WorldState] = {}
        # values received ahead of commit, keyed by tx id
        self.transient: dict[str, dict[tuple[str, str], bytes]] = {}
        self.stashed_at: dict[str, int] = {}

    def hash_state(self, collection: str) -> WorldState:
        return self.hashes.setdefault(collection, WorldState())

    def value_state(self, collection: str) -> WorldState:
        return self.values.setdefault(collection, WorldState())

    def get_value(self, collection: str, key: str) -> Optional[VersionedValue]:
        return self.values.get(collection, WorldState()).get(key)

    def stash(self, tx_id: str, collection: str, key: str, value: bytes, tick: int = 0) -> None:
        self.transient.setdefault(tx_id, {})[(collection, key)] = bytes(value)
        self.stashed_at.setdefault(tx_id, tick)

    def drop_stash(self, tx_id: str) -> None:
        self.transient.pop(tx_id, None)
        self.stashed_at.pop(tx_id, None)

    def evict_stale(self, oldest_tick: int) -> list[str]:
        """Drops stashed values first received before ``oldest_tick``. Returns the affected tx ids."""
        stale = [tx_id for tx_id, tick in self.stashed_at.items() if tick < oldest_tick]
        for tx_id in stale:
            self.drop_stash(tx_id)
        return stale

    def to_json(self) -> dict:
        return {
            "hashes": {name: state.to_json() for name, state in sorted(self.hashes.items())},
            "values": {name: state.to_json() for name, state in sorted(self.values.items())},
        }

    @classmethod
    def from_json(cls, data: dict) -> "PrivateStore":
        store = cls()
        store.hashes = {name: WorldState.from_json(state) for name, state in data["hashes"].items()}
        store.values = {name: WorldState.from_json(state) for name, state in data["values"].items()}
        return store

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)
