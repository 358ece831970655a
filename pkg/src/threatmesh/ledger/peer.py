"""Ledger peer: endorsement, block validation and commit, private data and queries."""

from typing import NamedTuple, Optional

from absl import logging

from threatmesh.contract import ChaincodeStub
from threatmesh.core import list_available_contracts, make_contract
from threatmesh.encoding import RecordReader, RecordWriter, sha256
from threatmesh.errors import (
    AccessDenied,
    ChainGap,
    ChainIntegrityError,
    ChannelUnknown,
    ContractError,
    IdentityRejected,
    NotFound,
    Partitioned,
)
from threatmesh.identity.ca import Certificate, Crl, RejectReason, Role
from threatmesh.identity.msp import Msp
from threatmesh.ledger.chain import verify_chain
from threatmesh.ledger.channel import ChannelConfig, LedgerConstants
from threatmesh.ledger.mspconfig import CRL_PREFIX
from threatmesh.ledger.records import Endorsement, LedgerBlock, Proposal, Transaction, ValidationFlag
from threatmesh.ledger.state import PrivateStore, WorldState
from threatmesh.netsim.network import Message, Network
from threatmesh.netsim.node import SimNode

PROPOSAL = "proposal"
ENDORSEMENT = "endorsement"
DELIVER = "deliver"
CATCH_UP = "catch-up"
PVTDATA = "pvtdata"
PVTDATA_ACK = "pvtdata-ack"
QUERY = "query"
QUERY_PRIVATE = "query-private"
VALUE = "value"
SUBSCRIBE = "subscribe"
SUBSCRIBED = "subscribed"
BLOCK_EVENT = "block-event"

_FLAGS = list(ValidationFlag)


class PrivateWrite(NamedTuple):
    collection: str
    key: str
    value: Optional[bytes]


def encode_private_writes(writes) -> bytes:
    return RecordWriter().seq(writes, lambda w, p: w.str_(p.collection).str_(p.key).optional_bytes(p.value)).getvalue()


def decode_private_writes(data: bytes) -> list[PrivateWrite]:
    reader = RecordReader(data)
    writes = reader.seq(lambda r: PrivateWrite(r.str_(), r.str_(), r.optional_bytes()))
    reader.done()
    return writes


def encode_transient(transient) -> bytes:
    return RecordWriter().seq(sorted((transient or {}).items()), lambda w, kv: w.str_(kv[0]).bytes_(kv[1])).getvalue()


def decode_transient(data: bytes) -> dict[str, bytes]:
    reader = RecordReader(data)
    transient = dict(reader.seq(lambda r: (r.str_(), r.bytes_())))
    reader.done()
    return transient


class ChannelLedger:
    """One channel's chain, world state and private data as held by one peer."""

    def __init__(self, config: ChannelConfig, genesis: LedgerBlock):
        self.config = config
        self.blocks: list[LedgerBlock] = [genesis]
        self.state = WorldState()
        self.private = PrivateStore()
        self.tx_ids: set[str] = set()
        self.buffered: dict[int, LedgerBlock] = {}
        self.catch_up_requested: Optional[int] = None

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def last_hash(self) -> bytes:
        return self.blocks[-1].hash


class Peer(SimNode):
    """
    A peer of one organization. Endorsement is read-only against committed state; commit is the
    single writer and applies a block atomically.
    """

    def __init__(self, node_id: str, identity, network: Network, msp: Msp, orderer_id: Optional[str] = None,
                 consts: LedgerConstants = None):
        super().__init__(node_id, identity, network)
        self.msp = msp
        self.orderer_id = orderer_id
        self.consts = consts or LedgerConstants()
        self.contracts = {name: make_contract(name) for name in list_available_contracts()}
        self.ledgers: dict[str, ChannelLedger] = {}
        self.subscribers: list[str] = []
        self.on(PROPOSAL, self._on_proposal)
        self.on(DELIVER, self._on_deliver)
        self.on(PVTDATA, self._on_pvtdata)
        self.on(QUERY, self._on_query)
        self.on(QUERY_PRIVATE, self._on_query_private)
        self.on(SUBSCRIBE, self._on_subscribe)

    @property
    def organization(self) -> str:
        return self.identity.cert.organization

    def ledger(self, channel: str) -> ChannelLedger:
        if channel not in self.ledgers:
            raise ChannelUnknown(f"{self.node_id} has not joined channel {channel!r}")
        return self.ledgers[channel]

    def join_channel(self, genesis: LedgerBlock) -> ChannelLedger:
        if genesis.number != 0 or genesis.config is None or sha256(genesis.data_bytes()) != genesis.data_hash:
            raise ChainIntegrityError("not a well-formed genesis block")
        config = ChannelConfig.from_bytes(genesis.config)
        self.ledgers[config.name] = ChannelLedger(config, genesis)
        logging.debug("%s joined channel %s", self.node_id, config.name)
        return self.ledgers[config.name]

    def restore_channel(self, blocks: list[LedgerBlock], state: WorldState, private: PrivateStore) -> ChannelLedger:
        """Reinstates a persisted ledger. The chain is re-verified; state is taken as saved."""
        verify_chain(blocks)
        ledger = self.join_channel(blocks[0])
        ledger.blocks = list(blocks)
        ledger.state = state
        ledger.private = private
        ledger.tx_ids = {tx.tx_id for block in blocks for tx in block.transactions}
        return ledger

    # endorsement
    def endorse(self, proposal: Proposal, transient=None) -> tuple[Endorsement, list[PrivateWrite]]:
        """
        Simulates ``proposal`` against committed state and signs the result.

        Returns: The endorsement and the private values it hashes, for dissemination to member peers.
        """
        ledger = self.ledger(proposal.channel)
        if not proposal.verify():
            raise IdentityRejected(RejectReason.BAD_SIGNATURE.value, "proposal signature")
        self.msp.require(proposal.creator, self.now)
        if proposal.creator.organization not in ledger.config.member_orgs:
            raise AccessDenied(f"{proposal.creator.organization} is not a member of {proposal.channel}")
        contract = self.contracts.get(proposal.contract)
        if contract is None:
            raise ContractError(f"contract {proposal.contract!r} is not installed on {self.node_id}")
        stub = ChaincodeStub(ledger.config, ledger.state, ledger.private, proposal, transient, self.msp, self.now)
        response = contract.invoke(stub, proposal.operation, proposal.args)
        rwset = stub.rwset()
        for write in rwset.private_writes:
            if self.organization not in ledger.config.collection(write.collection).member_orgs:
                raise AccessDenied(f"{self.node_id} may not handle collection {write.collection!r}")
        endorsement = Endorsement(self.identity.cert, proposal.hash, rwset, response)
        endorsement = endorsement.replace(signature=self.identity.sign(endorsement.body_bytes()))
        private = [PrivateWrite(c, k, v) for (c, k), v in sorted(stub.private_values().items())]
        return endorsement, private

    def _on_proposal(self, sender: str, message: Message) -> Message:
        reader = RecordReader(message.body)
        proposal, transient = Proposal.from_bytes(reader.bytes_()), decode_transient(reader.bytes_())
        reader.done()
        endorsement, private = self.endorse(proposal, transient)
        body = RecordWriter().bytes_(endorsement.to_bytes()).bytes_(encode_private_writes(private)).getvalue()
        return Message(ENDORSEMENT, body)

    # validation and commit
    def _identity_ok(self, tx: Transaction, tick: int) -> bool:
        if not tx.proposal.verify() or not self.msp.verify(tx.proposal.creator, tick).accepted:
            return False
        return all(self.msp.verify(e.endorser, tick).accepted for e in tx.endorsements)

    @staticmethod
    def _endorsements_ok(tx: Transaction, config: ChannelConfig) -> bool:
        if not tx.endorsements:
            return False
        rwset = tx.endorsements[0].rwset.to_bytes()
        orgs = set()
        for e in tx.endorsements:
            if (e.proposal_hash != tx.proposal.hash or not e.verify() or e.endorser.role != Role.PEER
                    or e.rwset.to_bytes() != rwset or e.endorser.organization not in config.member_orgs):
                return False
            orgs.add(e.endorser.organization)
        return config.policy.satisfied_by(orgs)

    def validate_and_commit(self, block: LedgerBlock) -> tuple[ValidationFlag, ...]:
        """
        Validates every transaction of ``block`` in order and commits the block atomically.

        Per transaction: replayed id, then identity of creator and endorsers at the block's cut tick,
        then the endorsement policy, then read-set versions against state including earlier valid
        transactions of the same block.

        Returns: The validation flag of each transaction.
        """
        ledger = self.ledger(block.channel)
        if block.number != ledger.height:
            raise ChainGap(f"{self.node_id} at height {ledger.height} received block {block.number}")
        if block.prev_hash != ledger.last_hash or sha256(block.data_bytes()) != block.data_hash:
            raise ChainIntegrityError(f"block {block.number} does not link to the local chain")
        if not block.verify_signature() or block.orderer.role != Role.ORDERER \
                or not self.msp.verify(block.orderer, block.cut_tick).accepted:
            raise ChainIntegrityError(f"block {block.number} is not signed by an accepted orderer")

        flags = []
        pending: dict[str, Optional[tuple[int, int]]] = {}
        seen = set()
        for index, tx in enumerate(block.transactions):
            if tx.tx_id in ledger.tx_ids or tx.tx_id in seen:
                flag = ValidationFlag.DUPLICATE_TXID
            elif not self._identity_ok(tx, block.cut_tick):
                flag = ValidationFlag.BAD_IDENTITY
            elif not self._endorsements_ok(tx, ledger.config):
                flag = ValidationFlag.BAD_ENDORSEMENT
            elif any(pending.get(r.key, ledger.state.version(r.key)) != r.version
                     for r in tx.endorsements[0].rwset.reads):
                flag = ValidationFlag.MVCC_CONFLICT
            else:
                flag = ValidationFlag.VALID
                for write in tx.endorsements[0].rwset.writes:
                    pending[write.key] = None if write.value is None else (block.number, index)
            seen.add(tx.tx_id)
            flags.append(flag)

        self._apply(ledger, block, flags)
        ledger.blocks.append(block.replace(validation_flags=tuple(flags)))
        ledger.tx_ids |= seen
        for tx in block.transactions:
            ledger.private.drop_stash(tx.tx_id)
        self._evict_stale(ledger)
        logging.debug("%s committed block %d of %s: %s", self.node_id, block.number, block.channel,
                      [f.value for f in flags])
        self._publish_event(block, flags)
        return tuple(flags)

    def _apply(self, ledger: ChannelLedger, block: LedgerBlock, flags) -> None:
        for index, (tx, flag) in enumerate(zip(block.transactions, flags)):
            if flag != ValidationFlag.VALID:
                continue
            version = (block.number, index)
            rwset = tx.endorsements[0].rwset
            for write in rwset.writes:
                if write.value is None:
                    ledger.state.delete(write.key)
                    continue
                ledger.state.put(write.key, write.value, version)
                if write.key.startswith(CRL_PREFIX):
                    self.msp.update_crl(Crl.from_bytes(write.value))
            stashed = ledger.private.transient.get(tx.tx_id, {})
            for write in rwset.private_writes:
                hashes = ledger.private.hash_state(write.collection)
                values = ledger.private.value_state(write.collection)
                if write.value_hash is None:
                    hashes.delete(write.key)
                    values.delete(write.key)
                    continue
                hashes.put(write.key, write.value_hash, version)
                if self.organization not in ledger.config.collection(write.collection).member_orgs:
                    continue
                value = stashed.get((write.collection, write.key))
                if value is None or sha256(value) != write.value_hash:
                    logging.warning("%s: private data for %s/%s of tx %s missing at commit",
                                    self.node_id, write.collection, write.key, tx.tx_id[:12])
                    continue
                values.put(write.key, value, version)

    def _publish_event(self, block: LedgerBlock, flags) -> None:
        body = (RecordWriter().str_(block.channel).u64(block.number).u64(block.cut_tick)
                .seq(zip(block.transactions, flags), lambda w, tf: w.str_(tf[0].tx_id).u8(_FLAGS.index(tf[1])))
                .getvalue())
        for subscriber in self.subscribers:
            try:
                self.notify(subscriber, BLOCK_EVENT, body)
            except Partitioned as e:
                logging.warning("%s: block event lost: %s", self.node_id, e)

    def _on_deliver(self, sender: str, message: Message) -> None:
        block = LedgerBlock.from_bytes(message.body)
        ledger = self.ledgers.get(block.channel)
        if ledger is None or block.number < ledger.height:
            return
        ledger.buffered[block.number] = block
        while ledger.height in ledger.buffered:
            try:
                self.validate_and_commit(ledger.buffered.pop(ledger.height))
            except ChainIntegrityError as e:
                logging.warning("%s: rejected block: %s", self.node_id, e)
                return
        if ledger.buffered and ledger.catch_up_requested != ledger.height and self.orderer_id:
            ledger.catch_up_requested = ledger.height
            logging.debug("%s requesting blocks of %s from %d", self.node_id, block.channel, ledger.height)
            self.notify(self.orderer_id, CATCH_UP, RecordWriter().str_(block.channel).u64(ledger.height).getvalue())

    # private data and queries
    def _on_pvtdata(self, sender: str, message: Message) -> Message:
        reader = RecordReader(message.body)
        channel, tx_id = reader.str_(), reader.str_()
        writes = decode_private_writes(reader.bytes_())
        reader.done()
        ledger = self.ledger(channel)
        for write in writes:
            collection = ledger.config.collection(write.collection)
            if collection is None or self.organization not in collection.member_orgs:
                raise AccessDenied(f"{self.node_id} is not a member of collection {write.collection!r}")
        self._evict_stale(ledger)
        for write in writes:
            if write.value is not None:
                ledger.private.stash(tx_id, write.collection, write.key, write.value, self.now)
        return Message(PVTDATA_ACK)

    def _evict_stale(self, ledger: ChannelLedger) -> None:
        stale = ledger.private.evict_stale(self.now - self.consts.PRIVATE_STASH_TICKS)
        if stale:
            logging.debug("%s dropped private data of %d uncommitted tx(s) on %s", self.node_id, len(stale),
                          ledger.config.name)

    def _authorize_caller(self, sender: str, cert: Certificate) -> None:
        if self.network.public_key_of(sender) != cert.public_key:
            raise AccessDenied(f"{sender} does not hold the presented certificate")
        self.msp.require(cert, self.now)

    def query(self, channel: str, key: str) -> bytes:
        entry = self.ledger(channel).state.get(key)
        if entry is None:
            raise NotFound(f"{key!r} not found on {channel}")
        return entry.value

    def query_private(self, channel: str, collection: str, key: str, caller: Certificate) -> bytes:
        ledger = self.ledger(channel)
        config = ledger.config.collection(collection)
        if config is None:
            raise NotFound(f"no collection {collection!r} on {channel}")
        if caller.organization not in config.member_orgs:
            raise AccessDenied(f"{caller.organization} is not a member of collection {collection!r}")
        if self.organization not in config.member_orgs:
            raise AccessDenied(f"{self.node_id} holds no values of collection {collection!r}")
        entry = ledger.private.get_value(collection, key)
        if entry is None:
            raise NotFound(f"{collection}/{key} not found")
        return entry.value

    def _on_query(self, sender: str, message: Message) -> Message:
        reader = RecordReader(message.body)
        channel, key, cert = reader.str_(), reader.str_(), Certificate.from_bytes(reader.bytes_())
        reader.done()
        self._authorize_caller(sender, cert)
        return Message(VALUE, self.query(channel, key))

    def _on_query_private(self, sender: str, message: Message) -> Message:
        reader = RecordReader(message.body)
        channel, collection, key = reader.str_(), reader.str_(), reader.str_()
        cert = Certificate.from_bytes(reader.bytes_())
        reader.done()
        self._authorize_caller(sender, cert)
        return Message(VALUE, self.query_private(channel, collection, key, cert))

    def _on_subscribe(self, sender: str, message: Message) -> Message:
        if sender not in self.subscribers:
            self.subscribers.append(sender)
        return Message(SUBSCRIBED)

    # inspection
    def chain_bytes(self, channel: str) -> list[bytes]:
        return [block.to_bytes() for block in self.ledger(channel).blocks]

    def state_hash(self, channel: str) -> bytes:
        return self.ledger(channel).state.state_hash()

    def storage_bytes(self) -> bytes:
        """Everything this peer persists, concatenated."""
        parts = []
        for channel, ledger in sorted(self.ledgers.items()):
            parts.extend(self.chain_bytes(channel))
            parts.append(ledger.private.dumps().encode())
            parts.extend(value for _, (value, _) in ledger.state.items())
        return b"".join(parts)
