import json
import os
import threading
from pathlib import Path
from typing import NamedTuple, Optional

from flax import struct

from threatmesh.cas.cid import Cid


@struct.dataclass
class ProviderRecord:
    cid: Cid
    node_id: str
    registered_at: int


class OwnerRecord(NamedTuple):
    fingerprint: str
    public_key: bytes
    registered_at: int


class ProviderRegistry:
    """
    Global in-simulation provider index standing in for a DHT.

    Maps root cids to the nodes holding all of their blocks, and to the certificate that first
    stored them (the owner, who alone may erase).
    """

    def __init__(self):
        self._providers: dict[Cid, dict[str, ProviderRecord]] = {}
        self._owners: dict[Cid, OwnerRecord] = {}
        self.nodes: list[str] = []
        self._lock = threading.Lock()

    def add_node(self, node_id: str) -> None:
        if node_id not in self.nodes:
            self.nodes.append(node_id)

    def register_provider(self, cid: Cid, node_id: str, tick: int) -> ProviderRecord:
        with self._lock:
            records = self._providers.setdefault(cid, {})
            if node_id not in records:
                records[node_id] = ProviderRecord(cid=cid, node_id=node_id, registered_at=tick)
            return records[node_id]

    def remove_provider(self, cid: Cid, node_id: str) -> None:
        with self._lock:
            records = self._providers.get(cid, {})
            records.pop(node_id, None)
            if not records:
                self._providers.pop(cid, None)

    def find_providers(self, cid: Cid) -> list[str]:
        """Nodes with a live provider record for ``cid``, in registration order."""
        return list(self._providers.get(cid, {}))

    def records(self, cid: Cid) -> list[ProviderRecord]:
        return list(self._providers.get(cid, {}).values())

    def set_owner(self, cid: Cid, fingerprint: str, public_key: bytes, tick: int) -> OwnerRecord:
        """Records the owner of ``cid`` unless one is already recorded; the first uploader keeps it."""
        with self._lock:
            return self._owners.setdefault(cid, OwnerRecord(fingerprint, public_key, tick))

    def owner_of(self, cid: Cid) -> Optional[OwnerRecord]:
        return self._owners.get(cid)

    def forget(self, cid: Cid) -> None:
        with self._lock:
            self._providers.pop(cid, None)
            self._owners.pop(cid, None)

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes,
            "providers": {
                str(cid): [[r.node_id, r.registered_at] for r in records.values()]
                for cid, records in self._providers.items()
            },
            "owners": {
                str(cid): [o.fingerprint, o.public_key.hex(), o.registered_at] for cid, o in self._owners.items()
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProviderRegistry":
        registry = cls()
        for node_id in data["nodes"]:
            registry.add_node(node_id)
        for text, records in data["providers"].items():
            for node_id, tick in records:
                registry.register_provider(Cid.parse(text), node_id, tick)
        for text, (fingerprint, key_hex, tick) in data["owners"].items():
            registry.set_owner(Cid.parse(text), fingerprint, bytes.fromhex(key_hex), tick)
        return registry

    def save(self, path: Path) -> None:
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: Path) -> "ProviderRegistry":
        return cls.from_json(json.loads(Path(path).read_text()))
