"""Client gateway: proposals, endorsement gathering, private data dissemination, submission and queries."""

from typing import Iterable, Mapping, NamedTuple, Optional

from absl import logging

from threatmesh.core import list_available_contracts, make_contract
from threatmesh.encoding import RecordReader, RecordWriter
from threatmesh.errors import ExchangeTimeout, TransactionInvalid
from threatmesh.identity.keys import Entropy
from threatmesh.ledger.channel import ChannelConfig, LedgerConstants
from threatmesh.ledger.orderer import BROADCAST
from threatmesh.ledger.peer import (
    BLOCK_EVENT,
    PROPOSAL,
    PVTDATA,
    PVTDATA_ACK,
    QUERY,
    QUERY_PRIVATE,
    SUBSCRIBE,
    PrivateWrite,
    decode_private_writes,
    encode_private_writes,
    encode_transient,
)
from threatmesh.ledger.records import NONCE_SIZE, Endorsement, Proposal, Transaction, ValidationFlag, make_proposal
from threatmesh.netsim.network import Message, Network
from threatmesh.netsim.node import SimNode, raise_for_error
from threatmesh.netsim.rng import SystemEntropy

_FLAGS = list(ValidationFlag)


class CommitStatus(NamedTuple):
    tx_id: str
    flag: ValidationFlag
    block_number: int
    cut_tick: int
    commit_tick: int


class EndorsedProposal(NamedTuple):
    proposal: Proposal
    endorsements: tuple[Endorsement, ...]
    private: tuple[PrivateWrite, ...]
    endorsed_at: int


class Gateway(SimNode):
    """
    Ledger access for one client identity.

    Commit notifications come as block events from the client's own organization peer, so commit
    latency is measured where the client observes it.
    """

    def __init__(self, node_id: str, identity, network: Network, channel: ChannelConfig,
                 peers_by_org: Mapping[str, list[str]], orderer_id: str, entropy: Optional[Entropy] = None,
                 consts: LedgerConstants = None):
        super().__init__(node_id, identity, network)
        self.channel = channel
        self.peers_by_org = {org: list(peers) for org, peers in peers_by_org.items()}
        self.orderer_id = orderer_id
        self.consts = consts or LedgerConstants()
        self._entropy = entropy or SystemEntropy()
        self.statuses: dict[str, CommitStatus] = {}
        self.submitted_at: dict[str, int] = {}
        self._contracts = {name: make_contract(name) for name in list_available_contracts()}
        self.on(BLOCK_EVENT, self._on_block_event)

    @property
    def event_peer(self) -> str:
        own = self.peers_by_org.get(self.identity.cert.organization)
        return own[0] if own else next(iter(self.peers_by_org.values()))[0]

    def subscribe(self) -> None:
        self.request(self.event_peer, SUBSCRIBE)

    # transactions
    def new_proposal(self, contract: str, operation: str, args: Iterable[bytes]) -> Proposal:
        nonce = self._entropy.token_bytes(NONCE_SIZE)
        return make_proposal(self.identity, self.channel.name, contract, operation, list(args), nonce)

    def default_endorsers(self, contract: str, operation: str) -> list[str]:
        """One peer per member org; for operations writing private collections only the collections' member orgs."""
        orgs = set(self.channel.member_orgs)
        if contract in self._contracts:
            for name in self._contracts[contract].collections(operation):
                collection = self.channel.collection(name)
                if collection is not None:
                    orgs &= collection.member_orgs
        return [self.peers_by_org[org][0] for org in sorted(orgs) if self.peers_by_org.get(org)]

    def endorse(self, proposal: Proposal, transient: Optional[Mapping[str, bytes]] = None,
                targets: Optional[Iterable[str]] = None) -> EndorsedProposal:
        """
        Sends ``proposal`` to the endorsing peers in parallel and collects their endorsements.

        Raises: The first peer's error if any peer rejects the proposal; ``ExchangeTimeout`` if no peer answers.
        """
        if targets is None:
            targets = self.default_endorsers(proposal.contract, proposal.operation)
        targets = list(targets)
        body = RecordWriter().bytes_(proposal.to_bytes()).bytes_(encode_transient(transient)).getvalue()
        request_ids = [self.send(peer, PROPOSAL, body) for peer in targets]
        replies = self.await_replies(request_ids, self.consts.COMMIT_TIMEOUT_TICKS)
        if not replies:
            raise ExchangeTimeout(f"no endorsement for {proposal.tx_id[:12]} within {self.consts.COMMIT_TIMEOUT_TICKS} ticks")
        endorsements, private = [], ()
        for request_id in request_ids:
            if request_id not in replies:
                continue
            reader = RecordReader(raise_for_error(replies[request_id]).body)
            endorsements.append(Endorsement.from_bytes(reader.bytes_()))
            private = tuple(decode_private_writes(reader.bytes_()))
        return EndorsedProposal(proposal, tuple(endorsements), private, self.now)

    def distribute_private(self, endorsed: EndorsedProposal) -> None:
        """Sends private values to every peer of the collections' member orgs and waits for their acks."""
        if not endorsed.private:
            return
        by_peer: dict[str, list[PrivateWrite]] = {}
        for write in endorsed.private:
            for org in sorted(self.channel.collection(write.collection).member_orgs):
                for peer in self.peers_by_org.get(org, []):
                    by_peer.setdefault(peer, []).append(write)
        request_ids = []
        for peer, writes in by_peer.items():
            body = (RecordWriter().str_(self.channel.name).str_(endorsed.proposal.tx_id)
                    .bytes_(encode_private_writes(writes)).getvalue())
            request_ids.append(self.send(peer, PVTDATA, body))
        acks = self.await_replies(request_ids, self.consts.COMMIT_TIMEOUT_TICKS)
        missing = len(request_ids) - sum(1 for reply in acks.values() if reply.kind == PVTDATA_ACK)
        if missing:
            logging.warning("%s: %d peer(s) did not acknowledge private data of %s",
                            self.node_id, missing, endorsed.proposal.tx_id[:12])

    def submit_async(self, proposal: Proposal, endorsements: Iterable[Endorsement]) -> str:
        """Sends the transaction to the orderer without waiting for anything. Returns its id."""
        tx = Transaction(proposal, tuple(endorsements))
        self.submitted_at.setdefault(tx.tx_id, self.now)
        self.send(self.orderer_id, BROADCAST, tx.to_bytes())
        return tx.tx_id

    def submit(self, proposal: Proposal, endorsements: Iterable[Endorsement]) -> str:
        """
        Queues the transaction at the orderer and waits for its acknowledgement.

        Raises: ``ChannelUnknown`` if the orderer does not serve the proposal's channel.
        """
        tx = Transaction(proposal, tuple(endorsements))
        self.submitted_at.setdefault(tx.tx_id, self.now)
        self.request(self.orderer_id, BROADCAST, tx.to_bytes(), self.consts.COMMIT_TIMEOUT_TICKS)
        return tx.tx_id

    def wait_for_commit(self, tx_id: str, timeout_ticks: Optional[int] = None) -> CommitStatus:
        timeout_ticks = timeout_ticks or self.consts.COMMIT_TIMEOUT_TICKS
        if not self.network.run_until(lambda: tx_id in self.statuses, timeout_ticks):
            raise ExchangeTimeout(f"{tx_id[:12]} not committed within {timeout_ticks} ticks")
        return self.statuses[tx_id]

    def transact(self, contract: str, operation: str, args: Iterable[bytes],
                 transient: Optional[Mapping[str, bytes]] = None) -> CommitStatus:
        """
        Proposes, endorses, disseminates private data, submits and waits for commit.

        Raises: ``TransactionInvalid`` if the transaction commits with a flag other than valid.
        """
        proposal = self.new_proposal(contract, operation, args)
        endorsed = self.endorse(proposal, transient)
        self.distribute_private(endorsed)
        tx_id = self.submit(proposal, endorsed.endorsements)
        status = self.wait_for_commit(tx_id)
        if status.flag != ValidationFlag.VALID:
            raise TransactionInvalid(f"{contract}.{operation} {tx_id[:12]} committed as {status.flag.value}")
        return status

    def _on_block_event(self, sender: str, message: Message) -> None:
        reader = RecordReader(message.body)
        channel, number, cut_tick = reader.str_(), reader.u64(), reader.u64()
        for tx_id, flag in reader.seq(lambda r: (r.str_(), _FLAGS[r.u8()])):
            # a replayed id keeps the status of its first commit
            self.statuses.setdefault(tx_id, CommitStatus(tx_id, flag, number, cut_tick, self.now))
        reader.done()

    # queries
    def query(self, key: str, peer: Optional[str] = None) -> bytes:
        body = RecordWriter().str_(self.channel.name).str_(key).bytes_(self.identity.cert.to_bytes()).getvalue()
        return self.request(peer or self.event_peer, QUERY, body).body

    def query_private(self, collection: str, key: str, peer: Optional[str] = None) -> bytes:
        body = (RecordWriter().str_(self.channel.name).str_(collection).str_(key)
                .bytes_(self.identity.cert.to_bytes()).getvalue())
        return self.request(peer or self.event_peer, QUERY_PRIVATE, body).body
