import json
import os
import threading
from collections import Counter
from pathlib import Path
from typing import Iterable, Iterator, Optional

from absl import logging

from threatmesh.cas.cid import Cid, Codec, HashAlgo
from threatmesh.cas.dag import CasConstants
from threatmesh.errors import IntegrityMismatch, NotFound, StorageFull


class BlockStore:
    """
    One node's blocks, keyed by cid, with reference counts from pinned roots.

    Reads may run concurrently; ``put``/``pin``/``unpin`` take the write lock. A block stays
    stored while at least one pinned root reaches it.
    """

    def __init__(self, consts: CasConstants = None):
        self.consts = consts or CasConstants()
        self._blocks: dict[Cid, bytes] = {}
        self._roots: dict[Cid, tuple[Cid, ...]] = {}
        self._refcount: Counter = Counter()
        self._lock = threading.RLock()

    def __contains__(self, cid: Cid) -> bool:
        return cid in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    @property
    def used_bytes(self) -> int:
        return sum(len(data) for data in self._blocks.values())

    def cids(self) -> list[Cid]:
        return list(self._blocks)

    def roots(self) -> list[Cid]:
        return list(self._roots)

    def items(self) -> Iterator[tuple[Cid, bytes]]:
        return iter(list(self._blocks.items()))

    def has_all(self, cids: Iterable[Cid]) -> bool:
        return all(cid in self._blocks for cid in cids)

    def put(self, cid: Cid, data: bytes) -> bool:
        """Stores a verified block. Returns False if it was already present."""
        if cid.hash_algo.hash(data) != cid.digest:
            raise IntegrityMismatch(f"block does not hash to {cid}")
        with self._lock:
            if cid in self._blocks:
                return False
            if self.used_bytes + len(data) > self.consts.CAPACITY_BYTES:
                raise StorageFull(f"storing {len(data)} bytes exceeds capacity {self.consts.CAPACITY_BYTES}")
            self._blocks[cid] = bytes(data)
            return True

    def put_raw(self, cid: Cid, data: bytes) -> None:
        """Stores bytes without verification (loading from disk); tampering surfaces at read."""
        with self._lock:
            self._blocks[cid] = bytes(data)

    def get(self, cid: Cid) -> bytes:
        """Returns a block after re-verifying its hash."""
        data = self._blocks.get(cid)
        if data is None:
            raise NotFound(f"block {cid} not stored")
        if cid.hash_algo.hash(data) != cid.digest:
            raise IntegrityMismatch(f"stored block {cid} was altered")
        return data

    def pin(self, root: Cid, members: Iterable[Cid]) -> None:
        with self._lock:
            if root in self._roots:
                return
            members = tuple(dict.fromkeys(members))
            self._roots[root] = members
            self._refcount.update(members)

    def is_pinned(self, root: Cid) -> bool:
        return root in self._roots

    def unpin(self, root: Cid) -> list[Cid]:
        """Drops a root and deletes every block no other root reaches. Returns the deleted cids."""
        with self._lock:
            members = self._roots.pop(root, None)
            if members is None:
                return []
            deleted = []
            for cid in members:
                self._refcount[cid] -= 1
                if self._refcount[cid] <= 0:
                    del self._refcount[cid]
                    if self._blocks.pop(cid, None) is not None:
                        deleted.append(cid)
            return deleted

    def save(self, directory: Path) -> None:
        """Writes one file per block named by hex digest plus ``index.json``."""
        blocks_dir = Path(directory) / "blocks"
        blocks_dir.mkdir(parents=True, exist_ok=True)
        wanted = {cid.hex for cid in self._blocks}
        for stale in blocks_dir.iterdir():
            if stale.name not in wanted:
                stale.unlink()
        for cid, data in self._blocks.items():
            (blocks_dir / cid.hex).write_bytes(data)
        index = {
            "blocks": {cid.hex: cid.codec.label for cid in self._blocks},
            "roots": {str(root): [str(m) for m in members] for root, members in self._roots.items()},
        }
        tmp = Path(directory) / "index.json.tmp"
        tmp.write_text(json.dumps(index, sort_keys=True, indent=1))
        os.replace(tmp, Path(directory) / "index.json")

    @classmethod
    def load(cls, directory: Path, consts: Optional[CasConstants] = None) -> "BlockStore":
        store = cls(consts)
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text())
        codecs = {codec.label: codec for codec in Codec}
        for digest_hex, label in index["blocks"].items():
            cid = Cid(codecs[label], HashAlgo.SHA2_256, bytes.fromhex(digest_hex))
            store.put_raw(cid, (directory / "blocks" / digest_hex).read_bytes())
        for root, members in index["roots"].items():
            store.pin(Cid.parse(root), [Cid.parse(m) for m in members])
        logging.debug("loaded %d blocks from %s", len(store), directory)
        return store
