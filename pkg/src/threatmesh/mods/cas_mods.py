from typing import Optional

from absl import logging

from threatmesh.cas.node import DONT_HAVE, WANT, _encode_cids, decode_want
from threatmesh.errors import NotFound
from threatmesh.netsim.network import Message
from threatmesh.wrappers import NodeWrapper


def flip_first_byte(data: bytes) -> bytes:
    return bytes([data[0] ^ 0x01]) + data[1:] if data else b"\x00"


class CorruptBlocksMod(NodeWrapper):
    """Provider answers wants with altered block bytes, for the first ``times`` blocks or forever."""

    def __init__(self, node, times: Optional[int] = None):
        super().__init__(node)
        self.remaining = times
        self.corrupted = 0

    def _corrupt_next(self) -> bool:
        if self.remaining is None:
            return True
        if self.remaining > 0:
            self.remaining -= 1
            return True
        return False

    def handle(self, sender: str, message: Message) -> None:
        if message.kind != WANT or message.reply_to:
            return super().handle(sender, message)
        _, cids = decode_want(message.body)
        missing = []
        for cid in cids:
            try:
                data = self._node.store.get(cid)
            except NotFound:
                missing.append(cid)
                continue
            if self._corrupt_next():
                data = flip_first_byte(data)
                self.corrupted += 1
            self._node.reply(sender, message, self._node.serve_block(cid, data))
        if missing:
            self._node.reply(sender, message, Message(DONT_HAVE, _encode_cids(missing)))


class SilentProviderMod(NodeWrapper):
    """Provider ignores every want request."""

    def handle(self, sender: str, message: Message) -> None:
        if message.kind == WANT and not message.reply_to:
            logging.debug("%s: ignoring want from %s", self._node.node_id, sender)
            return
        super().handle(sender, message)
