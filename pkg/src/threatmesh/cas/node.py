"""Content-store node: local put/get, want-list block exchange and owner-authorized erasure."""

from collections import Counter
from typing import NamedTuple, Optional

from absl import logging
from flax import struct

from threatmesh.cas.blockstore import BlockStore
from threatmesh.cas.cid import Cid
from threatmesh.cas.dag import CasConstants, build_dag, child_cids
from threatmesh.cas.registry import ProviderRegistry
from threatmesh.encoding import RecordReader, RecordWriter
from threatmesh.errors import (
    AccessDenied,
    ExchangeTimeout,
    IntegrityMismatch,
    NotFound,
    NotOwner,
    Partitioned,
    StorageFull,
)
from threatmesh.identity.ca import Certificate
from threatmesh.identity.keys import verify_signature
from threatmesh.identity.msp import Msp
from threatmesh.netsim.network import Message, Network
from threatmesh.netsim.node import SimNode, raise_for_error

WANT = "want"
BLOCK = "block"
DONT_HAVE = "dont-have"
ERASE_NOTICE = "erase-notice"
ERASE_ACK = "erase-ack"


class ExchangeStats(NamedTuple):
    root: Cid
    provider: str
    want_messages: int
    want_entries: int
    block_messages: int
    bytes_received: int
    rerequests: int


@struct.dataclass
class Delegation:
    """Owner-signed statement allowing ``delegate`` to erase ``cid``."""

    cid: Cid
    owner: str
    delegate: str
    signature: bytes = b""

    def body_bytes(self) -> bytes:
        return RecordWriter().str_("erase-delegation").bytes_(self.cid.to_bytes()).str_(self.owner).str_(self.delegate).getvalue()

    def to_bytes(self) -> bytes:
        return RecordWriter().bytes_(self.body_bytes()).bytes_(self.signature).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Delegation":
        reader = RecordReader(data)
        body = RecordReader(reader.bytes_())
        signature = reader.bytes_()
        reader.done()
        if body.str_() != "erase-delegation":
            raise ValueError("not an erase delegation")
        delegation = cls(cid=Cid.from_bytes(body.bytes_()), owner=body.str_(), delegate=body.str_(), signature=signature)
        body.done()
        return delegation


def delegate_erasure(owner, delegate_cert: Certificate, cid: Cid) -> Delegation:
    delegation = Delegation(cid=cid, owner=owner.cert.fingerprint, delegate=delegate_cert.fingerprint)
    return delegation.replace(signature=owner.sign(delegation.body_bytes()))


def erase_statement(cid: Cid) -> bytes:
    return RecordWriter().str_("erase").bytes_(cid.to_bytes()).getvalue()


def erase_proof(requester, cid: Cid) -> bytes:
    """The requester's signature authorizing erasure of ``cid``."""
    return requester.sign(erase_statement(cid))


class ErasureReceipt(NamedTuple):
    cid: Cid
    requester: str
    deleted_blocks: int
    acknowledged: tuple[str, ...]
    unconfirmed: tuple[str, ...]
    erased_at: int


def _encode_cids(cids) -> bytes:
    return RecordWriter().seq(cids, lambda w, c: w.bytes_(c.to_bytes())).getvalue()


def _decode_cids(data: bytes) -> list[Cid]:
    reader = RecordReader(data)
    cids = reader.seq(lambda r: Cid.from_bytes(r.bytes_()))
    reader.done()
    return cids


def encode_want(requester: Certificate, cids) -> bytes:
    return RecordWriter().bytes_(requester.to_bytes()).bytes_(_encode_cids(cids)).getvalue()


def decode_want(data: bytes) -> tuple[Certificate, list[Cid]]:
    reader = RecordReader(data)
    requester, cids = Certificate.from_bytes(reader.bytes_()), _decode_cids(reader.bytes_())
    reader.done()
    return requester, cids


class CasNode(SimNode):
    """
    One content-store node. Writes to the local store are serialized by the store's lock; blocks
    move between nodes only as ``want``/``block`` messages over the network.
    """

    def __init__(self, node_id: str, identity, network: Network, registry: ProviderRegistry, msp: Msp,
                 consts: CasConstants = None, store: Optional[BlockStore] = None):
        super().__init__(node_id, identity, network)
        self.consts = consts or CasConstants()
        self.store = store or BlockStore(self.consts)
        self.registry = registry
        self.msp = msp
        registry.add_node(node_id)
        self.on(WANT, self._on_want)
        self.on(ERASE_NOTICE, self._on_erase_notice)

    # local operations
    def _ensure_capacity(self, blocks: dict[Cid, bytes]) -> None:
        new_bytes = sum(len(data) for cid, data in blocks.items() if cid not in self.store)
        if self.store.used_bytes + new_bytes > self.consts.CAPACITY_BYTES:
            raise StorageFull(f"{self.node_id}: {new_bytes} more bytes exceed capacity {self.consts.CAPACITY_BYTES}")

    def _store_dag(self, root: Cid, blocks: dict[Cid, bytes]) -> None:
        self._ensure_capacity(blocks)
        for cid, data in blocks.items():
            self.store.put(cid, data)
        self.store.pin(root, blocks)

    def put_bytes(self, content: bytes, owner: Optional[Certificate] = None) -> Cid:
        """
        Chunks and stores ``content``, pins it and registers this node as a provider.

        Args:
            content: The bytes to store.
            owner: Certificate recorded as the owner, who may later erase the content.

        Returns: The root cid (a raw leaf for single-chunk content, otherwise a dag node).
        """
        root, blocks = build_dag(content, self.consts.CHUNK_SIZE)
        self._store_dag(root, blocks)
        self.registry.register_provider(root, self.node_id, self.now)
        if owner is not None:
            self.registry.set_owner(root, owner.fingerprint, owner.public_key, self.now)
        logging.debug("%s stored %s (%d bytes, %d blocks)", self.node_id, root, len(content), len(blocks))
        return root

    def has_content(self, cid: Cid) -> bool:
        if cid not in self.store:
            return False
        return self.store.has_all(child_cids(cid, self.store.get(cid)))

    def _assemble(self, cid: Cid) -> bytes:
        data = self.store.get(cid)
        children = child_cids(cid, data)
        if not children:
            return data
        return b"".join(self.store.get(child) for child in children)

    def get_bytes(self, cid: Cid) -> bytes:
        """Returns the content of ``cid``, fetching missing blocks from a provider. Every block is re-verified."""
        if not self.has_content(cid):
            self.exchange_want(cid)
        return self._assemble(cid)

    def find_providers(self, cid: Cid) -> list[str]:
        return self.registry.find_providers(cid)

    # exchange, requester side
    def exchange_want(self, cid: Cid) -> ExchangeStats:
        """
        Fetches every missing block of ``cid`` from the first provider that answers.

        Returns: Transfer statistics of the successful exchange.
        """
        providers = [p for p in self.registry.find_providers(cid) if p != self.node_id]
        if not providers:
            raise NotFound(f"no provider for {cid}")
        error: Optional[Exception] = None
        for provider in providers:
            try:
                return self._exchange_from(provider, cid)
            except (ExchangeTimeout, NotFound, Partitioned) as e:
                logging.warning("%s: exchange of %s with %s failed: %s", self.node_id, cid, provider, e)
                error = e
        if isinstance(error, Partitioned):
            raise NotFound(f"no reachable provider for {cid}") from error
        raise error

    def _exchange_from(self, provider: str, root: Cid) -> ExchangeStats:
        counts = Counter()
        blocks = {}
        if root in self.store:
            blocks[root] = self.store.get(root)
        else:
            blocks.update(self._want_verified(provider, [root], counts))
        missing = [c for c in dict.fromkeys(child_cids(root, blocks[root])) if c not in self.store]
        if missing:
            blocks.update(self._want_verified(provider, missing, counts))
        members = {root: None, **{c: None for c in child_cids(root, blocks[root])}}
        self._ensure_capacity(blocks)
        for cid, data in blocks.items():
            self.store.put(cid, data)
        self.store.pin(root, members)
        if self.consts.REPLICATE_ON_FETCH:
            self.registry.register_provider(root, self.node_id, self.now)
        stats = ExchangeStats(root, provider, counts["want_messages"], counts["want_entries"],
                              counts["block_messages"], counts["bytes"], counts["rerequests"])
        logging.debug("%s fetched %s from %s: %s", self.node_id, root, provider, stats)
        return stats

    def _want_verified(self, provider: str, cids: list[Cid], counts: Counter) -> dict[Cid, bytes]:
        blocks = self._want(provider, cids, counts)
        bad = [cid for cid, data in blocks.items() if cid.hash_algo.hash(data) != cid.digest]
        attempts = 0
        while bad:
            if attempts >= self.consts.MAX_REREQUESTS:
                raise IntegrityMismatch(f"{provider} sent {len(bad)} corrupted block(s), first {bad[0]}")
            attempts += 1
            logging.warning("%s: discarding %d corrupted block(s) from %s, re-requesting", self.node_id, len(bad), provider)
            counts["rerequests"] += len(bad)
            blocks.update(self._want(provider, bad, counts))
            bad = [cid for cid in bad if cid.hash_algo.hash(blocks[cid]) != cid.digest]
        return blocks

    @staticmethod
    def _parse_answers(replies) -> tuple[dict[Cid, bytes], set[Cid]]:
        blocks, missing = {}, set()
        for _, message in replies:
            try:
                if message.kind == BLOCK:
                    reader = RecordReader(message.body)
                    cid, data = Cid.from_bytes(reader.bytes_()), reader.bytes_()
                    reader.done()
                    blocks[cid] = data
                elif message.kind == DONT_HAVE:
                    missing.update(_decode_cids(message.body))
                else:
                    raise_for_error(message)
            except ValueError:
                logging.warning("ignoring malformed %s message", message.kind)
        return blocks, missing

    def _want(self, provider: str, cids: list[Cid], counts: Counter) -> dict[Cid, bytes]:
        wanted = set(cids)
        request_id = self.send(provider, WANT, encode_want(self.identity.cert, cids))
        counts["want_messages"] += 1
        counts["want_entries"] += len(cids)

        def answered() -> bool:
            blocks, missing = self._parse_answers(self.replies(request_id))
            return wanted <= blocks.keys() | missing

        self.network.run_until(answered, self.consts.EXCHANGE_TIMEOUT_TICKS)
        replies = self.take_replies(request_id)
        blocks, missing = self._parse_answers(replies)
        counts["block_messages"] += sum(1 for _, m in replies if m.kind == BLOCK)
        counts["bytes"] += sum(len(data) for data in blocks.values())
        if wanted & missing:
            raise NotFound(f"{provider} does not hold {len(wanted & missing)} wanted block(s)")
        if not wanted <= blocks.keys():
            raise ExchangeTimeout(f"{provider} did not answer within {self.consts.EXCHANGE_TIMEOUT_TICKS} ticks")
        return {cid: blocks[cid] for cid in cids}

    # exchange, provider side
    def serve_block(self, cid: Cid, data: bytes) -> Message:
        return Message(BLOCK, RecordWriter().bytes_(cid.to_bytes()).bytes_(data).getvalue())

    def _authorize_requester(self, sender: str, requester: Certificate) -> None:
        if self.network.public_key_of(sender) != requester.public_key:
            raise AccessDenied(f"{sender} does not hold the presented certificate")
        self.msp.require(requester, self.now)

    def _on_want(self, sender: str, message: Message) -> None:
        requester, cids = decode_want(message.body)
        self._authorize_requester(sender, requester)
        missing = []
        for cid in cids:
            try:
                data = self.store.get(cid)
            except (NotFound, IntegrityMismatch) as e:
                if isinstance(e, IntegrityMismatch):
                    logging.warning("%s: not serving altered block %s", self.node_id, cid)
                missing.append(cid)
                continue
            self.reply(sender, message, self.serve_block(cid, data))
        if missing:
            self.reply(sender, message, Message(DONT_HAVE, _encode_cids(missing)))

    # erasure
    def _authorize_erase(self, cid: Cid, requester: Certificate, proof: bytes, delegation: Optional[Delegation]) -> None:
        self.msp.require(requester, self.now)
        owner = self.registry.owner_of(cid)
        if owner is None:
            raise NotFound(f"no owner recorded for {cid}")
        if not verify_signature(requester.public_key, erase_statement(cid), proof):
            raise NotOwner(f"erase proof for {cid} does not verify under {requester.subject}'s key")
        if requester.fingerprint == owner.fingerprint:
            return
        if (delegation is not None and delegation.cid == cid and delegation.owner == owner.fingerprint
                and delegation.delegate == requester.fingerprint
                and verify_signature(owner.public_key, delegation.body_bytes(), delegation.signature)):
            return
        raise NotOwner(f"{requester.subject} is neither the owner of {cid} nor a delegate")

    def _erase_local(self, cid: Cid) -> int:
        deleted = self.store.unpin(cid)
        self.registry.remove_provider(cid, self.node_id)
        return len(deleted)

    def erase(self, cid: Cid, requester: Certificate, proof: bytes, delegation: Optional[Delegation] = None) -> ErasureReceipt:
        """
        Deletes ``cid`` on every content-store node.

        Args:
            cid: Root of the content to erase.
            requester: Certificate of the owner or a delegate.
            proof: The requester's signature over the erase statement (see :func:`erase_proof`).
            delegation: Owner-signed delegation when the requester is not the owner.

        Returns: A receipt naming the nodes that confirmed the erasure.
        """
        self._authorize_erase(cid, requester, proof, delegation)
        body = (RecordWriter().bytes_(cid.to_bytes()).bytes_(requester.to_bytes()).bytes_(proof)
                .optional_bytes(delegation.to_bytes() if delegation else None).getvalue())
        pending, unconfirmed = {}, []
        for node_id in self.registry.nodes:
            if node_id == self.node_id:
                continue
            try:
                pending[self.send(node_id, ERASE_NOTICE, body)] = node_id
            except Partitioned:
                unconfirmed.append(node_id)
        replies = self.await_replies(pending, self.consts.ERASE_TIMEOUT_TICKS)
        acknowledged = [pending[rid] for rid, reply in replies.items() if reply.kind == ERASE_ACK]
        unconfirmed += [node for rid, node in pending.items() if node not in acknowledged]
        deleted = self._erase_local(cid)
        self.registry.forget(cid)
        receipt = ErasureReceipt(cid, requester.fingerprint, deleted, tuple(sorted(acknowledged)),
                                 tuple(sorted(unconfirmed)), self.now)
        logging.info("%s erased %s: %d local blocks, %d nodes confirmed", self.node_id, cid, deleted, len(acknowledged))
        return receipt

    def _on_erase_notice(self, sender: str, message: Message) -> Message:
        reader = RecordReader(message.body)
        cid, requester, proof = Cid.from_bytes(reader.bytes_()), Certificate.from_bytes(reader.bytes_()), reader.bytes_()
        delegation_bytes = reader.optional_bytes()
        reader.done()
        delegation = Delegation.from_bytes(delegation_bytes) if delegation_bytes else None
        self._authorize_erase(cid, requester, proof, delegation)
        deleted = self._erase_local(cid)
        return Message(ERASE_ACK, RecordWriter().u32(deleted).getvalue())
