from threatmesh.encoding import RecordReader, RecordWriter
from threatmesh.errors import ThreatMeshError
from threatmesh.ledger.peer import DELIVER, ENDORSEMENT, PROPOSAL, decode_transient, encode_private_writes
from threatmesh.ledger.records import KVWrite, LedgerBlock, Proposal
from threatmesh.netsim.network import Message
from threatmesh.wrappers import NodeWrapper


class ForgedEndorsementMod(NodeWrapper):
    """
    Peer endorses with a tampered write set.

    With ``resign`` the forged endorsement carries a valid signature of the peer, so only the
    mismatch against other endorsers' write sets gives it away; without it the signature breaks.
    """

    def __init__(self, node, forged_key: str = "forged", resign: bool = True):
        super().__init__(node)
        self.forged_key = forged_key
        self.resign = resign

    def handle(self, sender: str, message: Message) -> None:
        if message.kind != PROPOSAL or message.reply_to:
            return super().handle(sender, message)
        reader = RecordReader(message.body)
        proposal, transient = Proposal.from_bytes(reader.bytes_()), decode_transient(reader.bytes_())
        try:
            endorsement, private = self._node.endorse(proposal, transient)
        except ThreatMeshError:
            return super().handle(sender, message)
        rwset = endorsement.rwset.replace(writes=endorsement.rwset.writes + (KVWrite(self.forged_key, b"\x01"),))
        endorsement = endorsement.replace(rwset=rwset)
        if self.resign:
            endorsement = endorsement.replace(signature=self._node.identity.sign(endorsement.body_bytes()))
        body = RecordWriter().bytes_(endorsement.to_bytes()).bytes_(encode_private_writes(private)).getvalue()
        self._node.reply(sender, message, Message(ENDORSEMENT, body))


class DropDeliveriesMod(NodeWrapper):
    """Peer loses the first delivery of the given block numbers; later copies get through."""

    def __init__(self, node, block_numbers):
        super().__init__(node)
        self.to_drop = set(block_numbers)
        self.dropped: list[int] = []

    def handle(self, sender: str, message: Message) -> None:
        if message.kind == DELIVER and not message.reply_to:
            number = LedgerBlock.from_bytes(message.body).number
            if number in self.to_drop:
                self.to_drop.discard(number)
                self.dropped.append(number)
                return
        super().handle(sender, message)
