"""Deterministic discrete-event message network."""

import csv
import heapq
import itertools
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Optional, Union

from absl import logging
from flax import struct

from threatmesh.encoding import RecordReader, RecordWriter
from threatmesh.errors import IntegrityMismatch, Partitioned, UnknownNode
from threatmesh.identity.keys import Entropy, KeyPair, open_sealed, seal, verify_signature
from threatmesh.netsim.rng import NET_STREAM, SeedStream

# reporting only
MS_PER_TICK = 1


class NetConfig(NamedTuple):
    seed: int = 0
    latency_ticks: tuple[int, int] = (1, 3)
    loss_rate: float = 0.0
    partitions: frozenset = frozenset()

    def validate(self) -> "NetConfig":
        low, high = self.latency_ticks
        if not 0 <= low <= high:
            raise ValueError(f"latency range must satisfy 0 <= min <= max, got {self.latency_ticks}")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError(f"loss_rate must be within [0, 1], got {self.loss_rate}")
        return self


@struct.dataclass
class Message:
    kind: str
    body: bytes = b""
    request_id: int = 0
    reply_to: int = 0

    def to_bytes(self) -> bytes:
        return RecordWriter().str_(self.kind).u64(self.request_id).u64(self.reply_to).bytes_(self.body).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Message":
        reader = RecordReader(data)
        kind, request_id, reply_to, body = reader.str_(), reader.u64(), reader.u64(), reader.bytes_()
        reader.done()
        return cls(kind=kind, body=body, request_id=request_id, reply_to=reply_to)


@struct.dataclass
class Envelope:
    from_node: str
    to_node: str
    kind: str
    payload: bytes
    sent_at: int
    deliver_at: int
    seq: int

    @property
    def size(self) -> int:
        return len(self.payload)


class TraceRow(NamedTuple):
    tick: int
    from_node: str
    to_node: str
    msg_type: str
    size: int


Handler = Callable[[str, Message], None]


class _Endpoint(NamedTuple):
    handler: Handler
    keys: KeyPair


def _context(from_node: str, to_node: str) -> bytes:
    return RecordWriter().str_(from_node).str_(to_node).getvalue()


class Network:
    """
    Single-threaded event loop carrying sealed envelopes between registered nodes.

    Each payload is signed with the sender's node key and sealed to the recipient's agreement key,
    standing in for a mutually authenticated TLS channel. Delivery ticks and losses are drawn from a
    seeded stream, so a run is a pure function of the seed and the sequence of sends.
    """

    def __init__(self, config: NetConfig = None, epoch: int = 0, entropy: Optional[Entropy] = None, now: int = 0):
        self.config = (config or NetConfig()).validate()
        self.now = now
        self._rng = SeedStream(self.config.seed, NET_STREAM, epoch)
        self._entropy = entropy
        self._endpoints: dict[str, _Endpoint] = {}
        self._public_keys: dict[str, bytes] = {}
        self._queue: list = []
        self._seq = itertools.count()
        self._partitions: set[frozenset] = {frozenset(pair) for pair in self.config.partitions}
        self.taps: list[Callable[[Envelope], None]] = []
        self.trace: list[TraceRow] = []
        self.sent = 0
        self.dropped = 0
        self.delivered = 0

    # registration
    def register(self, node_id: str, handler: Handler, keys: KeyPair) -> None:
        self._endpoints[node_id] = _Endpoint(handler, keys)
        self._public_keys[node_id] = keys.public_key

    def attach(self, node_id: str, handler: Handler) -> None:
        """Replaces the handler of an already registered node (used by wrappers and mods)."""
        if node_id not in self._endpoints:
            raise UnknownNode(f"node {node_id!r} is not registered")
        self._endpoints[node_id] = self._endpoints[node_id]._replace(handler=handler)

    def nodes(self) -> list[str]:
        return list(self._endpoints)

    def public_key_of(self, node_id: str) -> bytes:
        """The signing key that authenticates ``node_id``'s envelopes."""
        if node_id not in self._public_keys:
            raise UnknownNode(f"node {node_id!r} is not registered")
        return self._public_keys[node_id]

    def partition(self, a: str, b: str) -> None:
        self._partitions.add(frozenset((a, b)))

    def heal(self, a: str, b: str) -> None:
        self._partitions.discard(frozenset((a, b)))

    # sending
    def send(self, from_node: str, to_node: str, message: Message) -> Optional[Envelope]:
        """
        Queues ``message`` for delivery.

        Returns: The queued envelope, or None if it was lost.
        """
        for node in (from_node, to_node):
            if node not in self._endpoints:
                raise UnknownNode(f"node {node!r} is not registered")
        if frozenset((from_node, to_node)) in self._partitions:
            raise Partitioned(f"{from_node} and {to_node} are partitioned")
        low, high = self.config.latency_ticks
        # both draws happen for every send so the schedule does not depend on earlier losses
        delay = self._rng.randint(low, high)
        lost = self._rng.uniform() < self.config.loss_rate
        sender = self._endpoints[from_node].keys
        plaintext = message.to_bytes()
        signed = RecordWriter().bytes_(plaintext).bytes_(sender.sign(_context(from_node, to_node) + plaintext)).getvalue()
        recipient_key = self._endpoints[to_node].keys.agreement_key
        envelope = Envelope(
            from_node=from_node,
            to_node=to_node,
            kind=message.kind,
            payload=seal(recipient_key, signed, _context(from_node, to_node), self._entropy),
            sent_at=self.now,
            deliver_at=self.now + delay,
            seq=next(self._seq),
        )
        self.sent += 1
        for tap in self.taps:
            tap(envelope)
        if lost:
            self.dropped += 1
            logging.debug("dropped %s %s -> %s", message.kind, from_node, to_node)
            return None
        heapq.heappush(self._queue, (envelope.deliver_at, envelope.seq, envelope))
        return envelope

    def call_later(self, delay: int, callback: Callable[[], None]) -> None:
        """Schedules a local timer; timers share the (tick, enqueue order) ordering with envelopes."""
        heapq.heappush(self._queue, (self.now + max(0, delay), next(self._seq), callback))

    # running
    def pending(self) -> int:
        return len(self._queue)

    def _open(self, envelope: Envelope) -> Message:
        endpoint = self._endpoints[envelope.to_node]
        context = _context(envelope.from_node, envelope.to_node)
        reader = RecordReader(open_sealed(endpoint.keys.agreement, envelope.payload, context))
        plaintext, signature = reader.bytes_(), reader.bytes_()
        reader.done()
        if not verify_signature(self._public_keys[envelope.from_node], context + plaintext, signature):
            raise IntegrityMismatch(f"envelope {envelope.seq} from {envelope.from_node} has a bad signature")
        return Message.from_bytes(plaintext)

    def _deliver(self, envelope: Envelope) -> None:
        try:
            message = self._open(envelope)
        except (IntegrityMismatch, ValueError) as e:
            logging.warning("discarding envelope %d: %s", envelope.seq, e)
            return
        self.delivered += 1
        self.trace.append(TraceRow(self.now, envelope.from_node, envelope.to_node, envelope.kind, envelope.size))
        self._endpoints[envelope.to_node].handler(envelope.from_node, message)

    def _drain_due(self) -> int:
        delivered = 0
        while self._queue and self._queue[0][0] <= self.now:
            _, _, event = heapq.heappop(self._queue)
            if isinstance(event, Envelope):
                self._deliver(event)
                delivered += 1
            else:
                event()
        return delivered

    def step(self) -> int:
        """Advances one tick and delivers everything due. Returns the number of envelopes delivered."""
        self.now += 1
        return self._drain_due()

    def run_until_idle(self, max_ticks: int = 1_000_000) -> int:
        delivered = self._drain_due()
        deadline = self.now + max_ticks
        while self._queue and self.now < deadline:
            delivered += self.step()
        return delivered

    def run_until(self, predicate: Callable[[], bool], timeout_ticks: int) -> bool:
        """Steps until ``predicate`` holds or ``timeout_ticks`` pass. Returns whether it held."""
        self._drain_due()
        deadline = self.now + timeout_ticks
        while not predicate():
            if self.now >= deadline:
                return False
            if not self._queue:
                # nothing can change any more; let the clock run out
                self.now = deadline
                return False
            self.step()
        return True

    def advance_to(self, tick: int) -> int:
        delivered = self._drain_due()
        while self.now < tick:
            delivered += self.step()
        return delivered

    def export_trace(self, path: Union[str, Path], rows: Optional[Iterable[TraceRow]] = None) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["tick", "from", "to", "msg_type", "size"])
            writer.writerows(rows if rows is not None else self.trace)
