from typing import NamedTuple

from flax import struct

from threatmesh.cas.cid import Cid, Codec, cid_of
from threatmesh.encoding import RecordReader, RecordWriter


class CasConstants(NamedTuple):
    CHUNK_SIZE: int = 262144
    REPLICATE_ON_FETCH: bool = True
    CAPACITY_BYTES: int = 2**40
    EXCHANGE_TIMEOUT_TICKS: int = 50
    MAX_REREQUESTS: int = 1
    ERASE_TIMEOUT_TICKS: int = 50


class DagLink(NamedTuple):
    cid: Cid
    size: int


@struct.dataclass
class DagNode:
    links: tuple
    total_size: int

    def __post_init__(self):
        if len(self.links) < 2:
            raise ValueError(f"a dag node needs at least 2 links, got {len(self.links)}")
        if self.total_size != sum(link.size for link in self.links):
            raise ValueError("total_size must equal the sum of link sizes")

    def encode(self) -> bytes:
        """Link count (u32), then per link a length-prefixed record of cid bytes and u64 size."""
        w = RecordWriter().u32(len(self.links))
        for link in self.links:
            w.bytes_(RecordWriter().bytes_(link.cid.to_bytes()).u64(link.size).getvalue())
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "DagNode":
        reader = RecordReader(data)
        links = []
        for _ in range(reader.u32()):
            record = RecordReader(reader.bytes_())
            links.append(DagLink(Cid.from_bytes(record.bytes_()), record.u64()))
            record.done()
        reader.done()
        return cls(links=tuple(links), total_size=sum(link.size for link in links))

    @property
    def cid(self) -> Cid:
        return cid_of(self.encode(), Codec.DAG_NODE)


def chunk(content: bytes, chunk_size: int) -> list[bytes]:
    """Splits content into fixed-size chunks; empty content is a single empty chunk."""
    if chunk_size <= 0:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    if not content:
        return [b""]
    return [content[i:i + chunk_size] for i in range(0, len(content), chunk_size)]


def build_dag(content: bytes, chunk_size: int) -> tuple[Cid, dict[Cid, bytes]]:
    """
    Chunks ``content`` into raw leaves and, for more than one chunk, links them under a dag node.

    Returns: The root cid and every block keyed by its cid (root included).
    """
    leaves = chunk(content, chunk_size)
    blocks = {cid_of(leaf): leaf for leaf in leaves}
    if len(leaves) == 1:
        return cid_of(leaves[0]), blocks
    node = DagNode(links=tuple(DagLink(cid_of(leaf), len(leaf)) for leaf in leaves), total_size=len(content))
    encoded = node.encode()
    root = cid_of(encoded, Codec.DAG_NODE)
    blocks[root] = encoded
    return root, blocks


def child_cids(cid: Cid, data: bytes) -> list[Cid]:
    if cid.codec != Codec.DAG_NODE:
        return []
    return [link.cid for link in DagNode.decode(data).links]
