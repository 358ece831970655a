"""Threatmesh node wrappers"""

from collections import Counter

from threatmesh.netsim.network import Message


class NodeWrapper(object):
    """
    Base class for node wrappers.

    A wrapper takes over the node's network endpoint: incoming messages reach :meth:`handle` of
    the outermost wrapper, which passes them inward. Attribute access falls through to the node.
    """

    def __init__(self, node):
        self._node = node
        node.network.attach(node.node_id, self.handle)

    # provide proxy access to regular attributes of wrapped object
    def __getattr__(self, name):
        return getattr(self._node, name)

    @property
    def unwrapped(self):
        node = self._node
        while isinstance(node, NodeWrapper):
            node = node._node
        return node

    def handle(self, sender: str, message: Message) -> None:
        self._node.handle(sender, message)


class RecordingWrapper(NodeWrapper):
    """Counts every message the node receives by kind, and keeps (tick, sender, kind) rows."""

    def __init__(self, node):
        super().__init__(node)
        self.received: list[tuple[int, str, str]] = []
        self.counts: Counter = Counter()

    def handle(self, sender: str, message: Message) -> None:
        self.received.append((self._node.now, sender, message.kind))
        self.counts[message.kind] += 1
        super().handle(sender, message)
