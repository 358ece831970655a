from typing import Iterable, Optional

from absl import logging
from toolz import partition_all

from threatmesh.encoding import RecordReader
from threatmesh.errors import ChannelUnknown, Partitioned
from threatmesh.ledger.channel import ChannelConfig, LedgerConstants
from threatmesh.ledger.peer import CATCH_UP, DELIVER
from threatmesh.ledger.records import GENESIS_PREV_HASH, LedgerBlock, Transaction, cut_block
from threatmesh.netsim.network import Message, Network
from threatmesh.netsim.node import SimNode

BROADCAST = "broadcast"
BROADCAST_OK = "broadcast-ok"


def cut_batches(pending: Iterable[Transaction], batch_size: int) -> list[tuple[Transaction, ...]]:
    """Splits pending transactions, in arrival order, into batches of at most ``batch_size``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    return list(partition_all(batch_size, pending))


class _ChannelQueue:
    def __init__(self, config: ChannelConfig, genesis: LedgerBlock, peers: list[str]):
        self.config = config
        self.chain: list[LedgerBlock] = [genesis]
        self.peers = list(peers)
        self.pending: list[Transaction] = []
        self.deadline: Optional[int] = None
        self.busy_until = 0
        self.wakeup_at: Optional[int] = None


class SoloOrderer(SimNode):
    """
    Single ordering node. Transactions are queued per channel in arrival order; a block is cut when
    ``BATCH_SIZE`` transactions are pending or ``BATCH_TIMEOUT_TICKS`` after the first transaction
    of a batch arrived, whichever comes first. Cutting a block occupies the orderer for
    ``BLOCK_INTERVAL_TICKS``. Empty blocks are never cut.
    """

    def __init__(self, node_id: str, identity, network: Network, consts: LedgerConstants = None):
        super().__init__(node_id, identity, network)
        self.consts = consts or LedgerConstants()
        self.channels: dict[str, _ChannelQueue] = {}
        self.on(BROADCAST, self._on_broadcast)
        self.on(CATCH_UP, self._on_catch_up)

    def create_channel(self, config: ChannelConfig, peers: Iterable[str]) -> LedgerBlock:
        """Cuts and signs the genesis block carrying ``config``."""
        genesis = cut_block(config.name, 0, GENESIS_PREV_HASH, self.now, config=config.to_bytes(), orderer=self.identity)
        self.channels[config.name] = _ChannelQueue(config, genesis, list(peers))
        logging.info("%s created channel %s (%d peers)", self.node_id, config.name, len(self.channels[config.name].peers))
        return genesis

    def restore_channel(self, chain: list[LedgerBlock], peers: Iterable[str]) -> None:
        queue = _ChannelQueue(ChannelConfig.from_bytes(chain[0].config), chain[0], list(peers))
        queue.chain = [block.signed_part() for block in chain]
        self.channels[queue.config.name] = queue

    def chain(self, channel: str) -> list[LedgerBlock]:
        return list(self.channels[channel].chain)

    def enqueue(self, tx: Transaction) -> None:
        queue = self.channels.get(tx.proposal.channel)
        if queue is None:
            raise ChannelUnknown(f"unknown channel {tx.proposal.channel!r}")
        queue.pending.append(tx)
        self._schedule(queue)

    def order(self, transactions: Iterable[Transaction]) -> None:
        """Queues several transactions at the current tick, in the given order."""
        for tx in transactions:
            self.enqueue(tx)

    def _schedule(self, queue: _ChannelQueue) -> None:
        if not queue.pending:
            return
        if self.now < queue.busy_until:
            if queue.wakeup_at != queue.busy_until:
                queue.wakeup_at = queue.busy_until
                self.network.call_later(queue.busy_until - self.now, lambda: self._schedule(queue))
            return
        if len(queue.pending) >= self.consts.BATCH_SIZE or (queue.deadline is not None and self.now >= queue.deadline):
            self._cut(queue)
            return
        if queue.deadline is None:
            queue.deadline = self.now + self.consts.BATCH_TIMEOUT_TICKS
            self.network.call_later(self.consts.BATCH_TIMEOUT_TICKS, lambda: self._schedule(queue))

    def _cut(self, queue: _ChannelQueue) -> LedgerBlock:
        batch = cut_batches(queue.pending, self.consts.BATCH_SIZE)[0]
        queue.pending = queue.pending[len(batch):]
        previous = queue.chain[-1]
        block = cut_block(queue.config.name, previous.number + 1, previous.hash, self.now, batch, orderer=self.identity)
        queue.chain.append(block)
        queue.busy_until = self.now + self.consts.BLOCK_INTERVAL_TICKS
        queue.deadline = None
        logging.debug("%s cut block %d of %s with %d txs", self.node_id, block.number, queue.config.name, len(batch))
        self._broadcast(queue, block)
        if queue.pending:
            queue.deadline = self.now + self.consts.BATCH_TIMEOUT_TICKS
            self.network.call_later(self.consts.BATCH_TIMEOUT_TICKS, lambda: self._schedule(queue))
            self._schedule(queue)
        return block

    def _broadcast(self, queue: _ChannelQueue, block: LedgerBlock) -> None:
        payload = block.to_bytes()
        for peer in queue.peers:
            try:
                self.notify(peer, DELIVER, payload)
            except Partitioned as e:
                logging.warning("%s: block %d not delivered: %s", self.node_id, block.number, e)

    def _on_broadcast(self, sender: str, message: Message) -> Message:
        tx = Transaction.from_bytes(message.body)
        self.enqueue(tx)
        return Message(BROADCAST_OK, tx.tx_id.encode())

    def _on_catch_up(self, sender: str, message: Message) -> None:
        reader = RecordReader(message.body)
        channel, start = reader.str_(), reader.u64()
        reader.done()
        queue = self.channels.get(channel)
        if queue is None or sender not in queue.peers:
            return
        for block in queue.chain[start:]:
            try:
                self.notify(sender, DELIVER, block.to_bytes())
            except Partitioned as e:
                logging.warning("%s: catch-up for %s failed: %s", self.node_id, sender, e)
                return
