import enum
import hashlib

from flax import struct

from threatmesh.encoding import RecordReader, RecordWriter
from threatmesh.errors import NotFound

CID_VERSION = "cid1"


class Codec(enum.IntEnum):
    RAW_LEAF = 0x55
    DAG_NODE = 0x70

    @property
    def label(self) -> str:
        return self.name.lower()


class HashAlgo(enum.IntEnum):
    SHA2_256 = 0x12

    @property
    def digest_size(self) -> int:
        return 32

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()


@struct.dataclass
class Cid:
    codec: Codec
    hash_algo: HashAlgo
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != self.hash_algo.digest_size:
            raise ValueError(f"{self.hash_algo.name} digest must be {self.hash_algo.digest_size} bytes, got {len(self.digest)}")

    def __str__(self) -> str:
        return f"{CID_VERSION}:{self.codec.label}:{self.digest.hex()}"

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def to_bytes(self) -> bytes:
        return RecordWriter().u8(self.codec).u8(self.hash_algo).bytes_(self.digest).getvalue()

    @classmethod
    def read(cls, reader: RecordReader) -> "Cid":
        return cls(Codec(reader.u8()), HashAlgo(reader.u8()), reader.bytes_())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Cid":
        reader = RecordReader(data)
        cid = cls.read(reader)
        reader.done()
        return cid

    @classmethod
    def parse(cls, text: str) -> "Cid":
        """Parses the text form ``cid1:<codec>:<lowercase hex digest>``."""
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != CID_VERSION:
            raise ValueError(f"not a {CID_VERSION} identifier: {text!r}")
        codecs = {codec.label: codec for codec in Codec}
        if parts[1] not in codecs:
            raise ValueError(f"unknown codec {parts[1]!r}")
        if parts[2] != parts[2].lower():
            raise ValueError(f"digest must be lowercase hex: {text!r}")
        return cls(codecs[parts[1]], HashAlgo.SHA2_256, bytes.fromhex(parts[2]))


def cid_of(data: bytes, codec: Codec = Codec.RAW_LEAF, hash_algo: HashAlgo = HashAlgo.SHA2_256) -> Cid:
    return Cid(codec, hash_algo, hash_algo.hash(data))


def parse_cid(text: str) -> Cid:
    """Like :meth:`Cid.parse` but raises ``NotFound`` so that a malformed identifier reads as missing content."""
    try:
        return Cid.parse(text)
    except ValueError as e:
        raise NotFound(f"malformed cid {text!r}: {e}") from e
