"""Canonical ledger records: proposals, endorsements, transactions and blocks."""

import enum
from typing import NamedTuple, Optional

from flax import struct

from threatmesh.encoding import RecordReader, RecordWriter, sha256
from threatmesh.identity.ca import Certificate
from threatmesh.identity.keys import verify_signature

GENESIS_PREV_HASH = bytes(32)
NONCE_SIZE = 16


class KVRead(NamedTuple):
    key: str
    # (block number, tx index), None if the key was absent
    version: Optional[tuple[int, int]]


class KVWrite(NamedTuple):
    key: str
    # None deletes the key
    value: Optional[bytes]


class PrivateWriteHash(NamedTuple):
    collection: str
    key: str
    value_hash: Optional[bytes]


def _write_version(w: RecordWriter, version: Optional[tuple[int, int]]) -> None:
    w.bool_(version is not None)
    if version is not None:
        w.u64(version[0]).u64(version[1])


def _read_version(r: RecordReader) -> Optional[tuple[int, int]]:
    return (r.u64(), r.u64()) if r.bool_() else None


@struct.dataclass
class ReadWriteSet:
    reads: tuple = ()
    writes: tuple = ()
    private_writes: tuple = ()

    def to_bytes(self) -> bytes:
        w = RecordWriter()
        w.seq(self.reads, lambda w_, r: (w_.str_(r.key), _write_version(w_, r.version)))
        w.seq(self.writes, lambda w_, kv: w_.str_(kv.key).optional_bytes(kv.value))
        w.seq(self.private_writes, lambda w_, p: w_.str_(p.collection).str_(p.key).optional_bytes(p.value_hash))
        return w.getvalue()

    @classmethod
    def read(cls, reader: RecordReader) -> "ReadWriteSet":
        body = RecordReader(reader.bytes_())
        rwset = cls(
            reads=tuple(body.seq(lambda r: KVRead(r.str_(), _read_version(r)))),
            writes=tuple(body.seq(lambda r: KVWrite(r.str_(), r.optional_bytes()))),
            private_writes=tuple(body.seq(lambda r: PrivateWriteHash(r.str_(), r.str_(), r.optional_bytes()))),
        )
        body.done()
        return rwset


@struct.dataclass
class Proposal:
    channel: str
    contract: str
    operation: str
    args: tuple
    creator: Certificate
    nonce: bytes
    creator_signature: bytes = b""

    def body_bytes(self) -> bytes:
        """Bytes covered by ``creator_signature``."""
        w = RecordWriter().str_(self.channel).str_(self.contract).str_(self.operation)
        w.seq(self.args, lambda w_, a: w_.bytes_(a))
        return w.bytes_(self.nonce).bytes_(self.creator.to_bytes()).getvalue()

    def to_bytes(self) -> bytes:
        return RecordWriter().bytes_(self.body_bytes()).bytes_(self.creator_signature).getvalue()

    @classmethod
    def read(cls, reader: RecordReader) -> "Proposal":
        body = RecordReader(reader.bytes_())
        signature = reader.bytes_()
        proposal = cls(
            channel=body.str_(),
            contract=body.str_(),
            operation=body.str_(),
            args=tuple(body.seq(lambda r: r.bytes_())),
            nonce=body.bytes_(),
            creator=Certificate.from_bytes(body.bytes_()),
            creator_signature=signature,
        )
        body.done()
        return proposal

    @classmethod
    def from_bytes(cls, data: bytes) -> "Proposal":
        reader = RecordReader(data)
        proposal = cls.read(reader)
        reader.done()
        return proposal

    @property
    def hash(self) -> bytes:
        return sha256(self.to_bytes())

    @property
    def tx_id(self) -> str:
        return self.hash.hex()

    def verify(self) -> bool:
        return verify_signature(self.creator.public_key, self.body_bytes(), self.creator_signature)


def make_proposal(identity, channel: str, contract: str, operation: str, args, nonce: bytes) -> Proposal:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"proposal nonce must be {NONCE_SIZE} bytes, got {len(nonce)}")
    proposal = Proposal(channel, contract, operation, tuple(bytes(a) for a in args), identity.cert, nonce)
    return proposal.replace(creator_signature=identity.sign(proposal.body_bytes()))


@struct.dataclass
class Endorsement:
    endorser: Certificate
    proposal_hash: bytes
    rwset: ReadWriteSet
    response: bytes = b""
    signature: bytes = b""

    def body_bytes(self) -> bytes:
        return (RecordWriter().bytes_(self.endorser.to_bytes()).bytes_(self.proposal_hash)
                .bytes_(self.rwset.to_bytes()).bytes_(self.response).getvalue())

    def to_bytes(self) -> bytes:
        return RecordWriter().bytes_(self.body_bytes()).bytes_(self.signature).getvalue()

    @classmethod
    def read(cls, reader: RecordReader) -> "Endorsement":
        body = RecordReader(reader.bytes_())
        signature = reader.bytes_()
        endorsement = cls(
            endorser=Certificate.from_bytes(body.bytes_()),
            proposal_hash=body.bytes_(),
            rwset=ReadWriteSet.read(body),
            response=body.bytes_(),
            signature=signature,
        )
        body.done()
        return endorsement

    @classmethod
    def from_bytes(cls, data: bytes) -> "Endorsement":
        reader = RecordReader(data)
        endorsement = cls.read(reader)
        reader.done()
        return endorsement

    def verify(self) -> bool:
        return verify_signature(self.endorser.public_key, self.body_bytes(), self.signature)


@struct.dataclass
class Transaction:
    proposal: Proposal
    endorsements: tuple

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    def to_bytes(self) -> bytes:
        w = RecordWriter().bytes_(self.proposal.to_bytes())
        return w.seq(self.endorsements, lambda w_, e: w_.bytes_(e.to_bytes())).getvalue()

    @classmethod
    def read(cls, reader: RecordReader) -> "Transaction":
        proposal = Proposal.from_bytes(reader.bytes_())
        endorsements = tuple(reader.seq(lambda r: Endorsement.from_bytes(r.bytes_())))
        return cls(proposal=proposal, endorsements=endorsements)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transaction":
        reader = RecordReader(data)
        tx = cls.read(reader)
        reader.done()
        return tx


class ValidationFlag(str, enum.Enum):
    VALID = "valid"
    BAD_ENDORSEMENT = "bad_endorsement"
    MVCC_CONFLICT = "mvcc_conflict"
    BAD_IDENTITY = "bad_identity"
    DUPLICATE_TXID = "duplicate_txid"


_FLAGS = list(ValidationFlag)


@struct.dataclass
class LedgerBlock:
    """
    A block as cut by the orderer plus the validation flags a peer attaches at commit.

    The orderer signs the header; the header binds the body through ``data_hash`` and the previous
    block through ``prev_hash``. Flags are commit metadata outside the signed part.
    """

    channel: str
    number: int
    prev_hash: bytes
    data_hash: bytes
    cut_tick: int
    transactions: tuple = ()
    config: Optional[bytes] = None
    orderer: Optional[Certificate] = None
    orderer_signature: bytes = b""
    validation_flags: tuple = ()

    def data_bytes(self) -> bytes:
        w = RecordWriter().optional_bytes(self.config)
        return w.seq(self.transactions, lambda w_, tx: w_.bytes_(tx.to_bytes())).getvalue()

    def header_bytes(self) -> bytes:
        return RecordWriter().str_(self.channel).u64(self.number).bytes_(self.prev_hash).bytes_(self.data_hash).u64(self.cut_tick).getvalue()

    @property
    def hash(self) -> bytes:
        return sha256(self.header_bytes())

    def to_bytes(self) -> bytes:
        w = RecordWriter().bytes_(self.header_bytes()).bytes_(self.data_bytes())
        w.optional_bytes(self.orderer.to_bytes() if self.orderer else None).bytes_(self.orderer_signature)
        return w.seq(self.validation_flags, lambda w_, f: w_.u8(_FLAGS.index(f))).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LedgerBlock":
        reader = RecordReader(data)
        header = RecordReader(reader.bytes_())
        channel, number = header.str_(), header.u64()
        prev_hash, data_hash, cut_tick = header.bytes_(), header.bytes_(), header.u64()
        header.done()
        body = RecordReader(reader.bytes_())
        config = body.optional_bytes()
        transactions = tuple(body.seq(lambda r: Transaction.from_bytes(r.bytes_())))
        body.done()
        orderer = reader.optional_bytes()
        signature = reader.bytes_()
        flags = tuple(reader.seq(lambda r: _FLAGS[r.u8()]))
        reader.done()
        return cls(
            channel=channel,
            number=number,
            prev_hash=prev_hash,
            data_hash=data_hash,
            cut_tick=cut_tick,
            transactions=transactions,
            config=config,
            orderer=Certificate.from_bytes(orderer) if orderer else None,
            orderer_signature=signature,
            validation_flags=flags,
        )

    def signed_part(self) -> "LedgerBlock":
        return self.replace(validation_flags=())

    def verify_signature(self) -> bool:
        return self.orderer is not None and verify_signature(
            self.orderer.public_key, self.header_bytes(), self.orderer_signature)


def cut_block(channel: str, number: int, prev_hash: bytes, cut_tick: int, transactions=(), config: Optional[bytes] = None,
              orderer=None) -> LedgerBlock:
    """Assembles and, given an orderer identity, signs a block."""
    block = LedgerBlock(channel=channel, number=number, prev_hash=prev_hash, data_hash=b"", cut_tick=cut_tick,
                        transactions=tuple(transactions), config=config)
    block = block.replace(data_hash=sha256(block.data_bytes()))
    if orderer is None:
        return block
    return block.replace(orderer=orderer.cert, orderer_signature=orderer.sign(block.header_bytes()))
