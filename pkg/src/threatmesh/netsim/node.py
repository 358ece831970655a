import itertools
from collections import defaultdict
from typing import Callable, Iterable, Optional

from absl import logging

from threatmesh.errors import ExchangeTimeout, Partitioned, ThreatMeshError, decode_error, encode_error
from threatmesh.netsim.network import Message, Network

ERROR = "error"

# default wait for request/reply round trips
RPC_TIMEOUT_TICKS = 50

RequestHandler = Callable[[str, Message], Optional[Message]]


class SimNode:
    """
    Base class for every node attached to a :class:`Network`.

    Incoming requests are dispatched by message kind to handlers registered with :meth:`on`. A
    handler may return a reply, which is sent back with ``reply_to`` set; a ``ThreatMeshError``
    raised by a handler becomes an ``error`` reply. Replies are collected in ``inbox`` keyed by the
    request they answer. Handlers must not block; only callers outside the event loop may use
    :meth:`request` or :meth:`await_replies`.
    """

    def __init__(self, node_id: str, identity, network: Network):
        self.node_id = node_id
        self.identity = identity
        self.network = network
        self.inbox: dict[int, list[tuple[str, Message]]] = defaultdict(list)
        self._handlers: dict[str, RequestHandler] = {}
        self._request_ids = itertools.count(1)
        network.register(node_id, self.handle, identity.keys)

    @property
    def now(self) -> int:
        return self.network.now

    def on(self, kind: str, handler: RequestHandler) -> None:
        self._handlers[kind] = handler

    def handle(self, sender: str, message: Message) -> None:
        if message.reply_to:
            self.inbox[message.reply_to].append((sender, message))
            return
        handler = self._handlers.get(message.kind)
        if handler is None:
            logging.warning("%s: no handler for %r from %s", self.node_id, message.kind, sender)
            reply = Message(ERROR, encode_error(ThreatMeshError(f"{self.node_id} cannot handle {message.kind!r}")))
        else:
            try:
                reply = handler(sender, message)
            except ThreatMeshError as e:
                logging.debug("%s: %s from %s failed: %s", self.node_id, message.kind, sender, e)
                reply = Message(ERROR, encode_error(e))
        if reply is not None and message.request_id:
            self.reply(sender, message, reply)

    def reply(self, to: str, request: Message, reply: Message) -> None:
        try:
            self.network.send(self.node_id, to, reply.replace(reply_to=request.request_id))
        except Partitioned as e:
            logging.warning("%s: reply lost: %s", self.node_id, e)

    def send(self, to: str, kind: str, body: bytes = b"") -> int:
        """Sends a request without waiting. Returns its request id."""
        request_id = next(self._request_ids)
        self.network.send(self.node_id, to, Message(kind, body, request_id=request_id))
        return request_id

    def notify(self, to: str, kind: str, body: bytes = b"") -> None:
        """One-way message; the recipient does not reply."""
        self.network.send(self.node_id, to, Message(kind, body))

    def replies(self, request_id: int) -> list[tuple[str, Message]]:
        return self.inbox.get(request_id, [])

    def take_replies(self, request_id: int) -> list[tuple[str, Message]]:
        return self.inbox.pop(request_id, [])

    def await_replies(self, request_ids: Iterable[int], timeout_ticks: int = RPC_TIMEOUT_TICKS) -> dict[int, Message]:
        """Runs the network until every request has a reply or the timeout passes. Returns what arrived."""
        request_ids = list(request_ids)
        self.network.run_until(lambda: all(self.inbox.get(rid) for rid in request_ids), timeout_ticks)
        return {rid: self.take_replies(rid)[0][1] for rid in request_ids if self.inbox.get(rid)}

    def request(self, to: str, kind: str, body: bytes = b"", timeout_ticks: int = RPC_TIMEOUT_TICKS) -> Message:
        """
        Sends a request and runs the network until its reply arrives.

        Raises: ``ExchangeTimeout`` without a reply; the decoded error for an ``error`` reply.
        """
        request_id = self.send(to, kind, body)
        reply = self.await_replies([request_id], timeout_ticks).get(request_id)
        if reply is None:
            raise ExchangeTimeout(f"{self.node_id}: no reply to {kind!r} from {to} within {timeout_ticks} ticks")
        return raise_for_error(reply)


def raise_for_error(reply: Message) -> Message:
    if reply.kind == ERROR:
        raise decode_error(reply.body)
    return reply
