from typing import Iterable, NamedTuple, Optional

from flax import struct

from threatmesh.encoding import RecordReader, RecordWriter, sha256
from threatmesh.identity.ca import Certificate


class LedgerConstants(NamedTuple):
    BATCH_SIZE: int = 10
    BATCH_TIMEOUT_TICKS: int = 2
    # orderer busy time per cut block
    BLOCK_INTERVAL_TICKS: int = 1
    COMMIT_TIMEOUT_TICKS: int = 200
    # private values of a tx that has not committed by then are dropped
    PRIVATE_STASH_TICKS: int = 400


@struct.dataclass
class EndorsementPolicy:
    required_orgs: int
    member_orgs: frozenset

    def __post_init__(self):
        if not 1 <= self.required_orgs <= len(self.member_orgs):
            raise ValueError(
                f"endorsement policy needs 1 <= N <= {len(self.member_orgs)} member orgs, got N={self.required_orgs}")

    @classmethod
    def majority(cls, member_orgs: Iterable[str]) -> "EndorsementPolicy":
        member_orgs = frozenset(member_orgs)
        return cls(required_orgs=len(member_orgs) // 2 + 1, member_orgs=member_orgs)

    def satisfied_by(self, orgs: Iterable[str]) -> bool:
        return len(set(orgs) & self.member_orgs) >= self.required_orgs


@struct.dataclass
class CollectionConfig:
    name: str
    member_orgs: frozenset


@struct.dataclass
class ChannelConfig:
    """Channel membership, endorsement policy and private collections; hashed into the genesis block."""

    name: str
    policy: EndorsementPolicy
    collections: tuple = ()
    orderer: Optional[Certificate] = None

    @property
    def member_orgs(self) -> frozenset:
        return self.policy.member_orgs

    def collection(self, name: str) -> Optional[CollectionConfig]:
        for collection in self.collections:
            if collection.name == name:
                return collection
        return None

    def to_bytes(self) -> bytes:
        w = RecordWriter().str_(self.name).u32(self.policy.required_orgs)
        w.seq(sorted(self.policy.member_orgs), lambda w_, org: w_.str_(org))
        w.seq(self.collections, lambda w_, c: w_.str_(c.name).seq(sorted(c.member_orgs), lambda w__, o: w__.str_(o)))
        w.optional_bytes(self.orderer.to_bytes() if self.orderer else None)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChannelConfig":
        reader = RecordReader(data)
        name, required = reader.str_(), reader.u32()
        members = frozenset(reader.seq(lambda r: r.str_()))
        collections = tuple(reader.seq(lambda r: CollectionConfig(r.str_(), frozenset(r.seq(lambda r_: r_.str_())))))
        orderer = reader.optional_bytes()
        reader.done()
        return cls(
            name=name,
            policy=EndorsementPolicy(required, members),
            collections=collections,
            orderer=Certificate.from_bytes(orderer) if orderer else None,
        )

    @property
    def config_hash(self) -> bytes:
        return sha256(self.to_bytes())
