import numpy as np
import pytest

from threatmesh.cas.blockstore import BlockStore
from threatmesh.cas.cid import Cid, Codec, cid_of, parse_cid
from threatmesh.cas.dag import CasConstants, DagNode, build_dag, chunk
from threatmesh.cas.node import WANT, CasNode, delegate_erasure, encode_want, erase_proof
from threatmesh.cas.registry import ProviderRegistry
from threatmesh.errors import (
    AccessDenied,
    ExchangeTimeout,
    IdentityRejected,
    IntegrityMismatch,
    NotFound,
    NotOwner,
    StorageFull,
)
from threatmesh.identity.actor import Identity
from threatmesh.identity.ca import Role, ca_init
from threatmesh.identity.keys import KeyPair
from threatmesh.identity.msp import Msp
from threatmesh.mods.cas_mods import CorruptBlocksMod, SilentProviderMod

SMALL_CHUNKS = CasConstants(CHUNK_SIZE=4)


def _all_blocks(cluster) -> set[Cid]:
    return {cid for node in cluster.nodes for cid in node.store.cids()}


def test_cid_text_form():
    cid = cid_of(b"hello")
    assert str(cid).startswith("cid1:raw_leaf:")
    assert Cid.parse(str(cid)) == cid
    assert Cid.from_bytes(cid.to_bytes()) == cid
    with pytest.raises(NotFound):
        parse_cid("cid1:raw_leaf:XYZ")
    with pytest.raises(NotFound):
        parse_cid("sha256:abcd")


def test_chunking():
    assert chunk(b"", 4) == [b""]
    assert chunk(b"abcdefghij", 4) == [b"abcd", b"efgh", b"ij"]
    with pytest.raises(ValueError):
        chunk(b"abc", 0)


def test_build_dag_single_and_multi_chunk():
    root, blocks = build_dag(b"abc", 4)
    assert root.codec == Codec.RAW_LEAF
    assert blocks == {root: b"abc"}

    root, blocks = build_dag(b"abcdefghij", 4)
    assert root.codec == Codec.DAG_NODE
    assert len(blocks) == 4
    node = DagNode.decode(blocks[root])
    assert node.total_size == 10
    assert [link.size for link in node.links] == [4, 4, 2]
    assert node.cid == root


def test_dag_node_needs_two_links():
    with pytest.raises(ValueError):
        DagNode(links=(), total_size=0)


def test_put_is_content_addressed(cas_cluster):
    node = cas_cluster.nodes[0]
    a = node.put_bytes(b"same content")
    b = node.put_bytes(b"same content")
    assert a == b
    assert len(node.store) == 1
    assert node.get_bytes(a) == b"same content"
    assert cas_cluster.registry.find_providers(a) == ["cas0"]


def test_chunks_are_deduplicated(make_cas_cluster):
    cluster = make_cas_cluster(consts=SMALL_CHUNKS)
    node = cluster.nodes[0]
    node.put_bytes(b"abcdefgh1234")
    node.put_bytes(b"abcdefgh5678")
    # abcd and efgh are shared: 2 roots + 2 shared leaves + 2 distinct leaves
    assert len(node.store) == 6


def test_fetch_from_provider(make_cas_cluster):
    cluster = make_cas_cluster(consts=SMALL_CHUNKS)
    content = bytes(range(50))
    root = cluster.nodes[0].put_bytes(content)
    stats = cluster.nodes[1].exchange_want(root)
    assert stats.provider == "cas0"
    assert stats.rerequests == 0
    assert cluster.nodes[1].get_bytes(root) == content
    assert cluster.registry.find_providers(root) == ["cas0", "cas1"]
    kinds = {row.msg_type for row in cluster.network.trace}
    assert {"want", "block"} <= kinds


def test_fetch_unknown_cid(cas_cluster):
    with pytest.raises(NotFound):
        cas_cluster.nodes[1].get_bytes(cid_of(b"nobody stored this"))


def test_corrupted_block_is_re_requested(cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"payload")
    corrupt = CorruptBlocksMod(cas_cluster.nodes[0], times=1)
    stats = cas_cluster.nodes[1].exchange_want(root)
    assert corrupt.corrupted == 1
    assert stats.rerequests == 1
    assert cas_cluster.nodes[1].get_bytes(root) == b"payload"


def test_persistently_corrupted_provider_fails(cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"payload")
    CorruptBlocksMod(cas_cluster.nodes[0])
    with pytest.raises(IntegrityMismatch):
        cas_cluster.nodes[1].get_bytes(root)
    assert root not in cas_cluster.nodes[1].store


def test_silent_provider_times_out(cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"payload")
    SilentProviderMod(cas_cluster.nodes[0])
    start = cas_cluster.network.now
    with pytest.raises(ExchangeTimeout):
        cas_cluster.nodes[1].get_bytes(root)
    assert cas_cluster.network.now - start >= CasConstants().EXCHANGE_TIMEOUT_TICKS


def test_capacity_is_enforced(make_cas_cluster):
    cluster = make_cas_cluster(consts=CasConstants(CAPACITY_BYTES=10))
    cluster.nodes[0].put_bytes(b"0123456789")
    with pytest.raises(StorageFull):
        cluster.nodes[0].put_bytes(b"x")


def test_stored_block_bit_flips_are_detected():
    """Every single-bit alteration of a stored block fails verification on read."""
    rng = np.random.default_rng(11)
    store = BlockStore()
    for _ in range(1000):
        data = rng.bytes(int(rng.integers(1, 64)))
        cid = cid_of(data)
        store.put(cid, data)
        position = int(rng.integers(len(data) * 8))
        flipped = bytearray(data)
        flipped[position // 8] ^= 1 << (position % 8)
        store.put_raw(cid, bytes(flipped))
        with pytest.raises(IntegrityMismatch):
            store.get(cid)


def test_put_rejects_mismatched_bytes():
    with pytest.raises(IntegrityMismatch):
        BlockStore().put(cid_of(b"a"), b"b")


def test_owner_erasure_removes_every_block(make_cas_cluster):
    cluster = make_cas_cluster(consts=SMALL_CHUNKS)
    owner = cluster.owner
    root = cluster.nodes[0].put_bytes(b"erase me completely", owner=owner.cert)
    cluster.nodes[1].get_bytes(root)
    cluster.nodes[2].get_bytes(root)
    _, dag = build_dag(b"erase me completely", SMALL_CHUNKS.CHUNK_SIZE)

    receipt = cluster.nodes[0].erase(root, owner.cert, erase_proof(owner, root))
    assert receipt.acknowledged == ("cas1", "cas2")
    assert receipt.unconfirmed == ()
    assert receipt.deleted_blocks == len(dag)
    assert not _all_blocks(cluster) & dag.keys()
    assert cluster.registry.find_providers(root) == []
    with pytest.raises(NotFound):
        cluster.nodes[1].get_bytes(root)


def test_erasure_keeps_chunks_of_other_content(make_cas_cluster):
    cluster = make_cas_cluster(consts=SMALL_CHUNKS)
    owner, node = cluster.owner, cluster.nodes[0]
    erased = node.put_bytes(b"abcdefgh1234", owner=owner.cert)
    kept = node.put_bytes(b"abcdefgh5678", owner=cluster.other.cert)
    node.erase(erased, owner.cert, erase_proof(owner, erased))
    assert node.get_bytes(kept) == b"abcdefgh5678"
    assert cid_of(b"1234") not in node.store
    assert cid_of(b"abcd") in node.store


def test_only_owner_or_delegate_may_erase(cas_cluster):
    owner, other = cas_cluster.owner, cas_cluster.other
    root = cas_cluster.nodes[0].put_bytes(b"owned", owner=owner.cert)
    with pytest.raises(NotOwner):
        cas_cluster.nodes[0].erase(root, other.cert, erase_proof(other, root))
    # a proof signed by someone else does not count either
    with pytest.raises(NotOwner):
        cas_cluster.nodes[0].erase(root, owner.cert, erase_proof(other, root))
    assert root in cas_cluster.nodes[0].store

    delegation = delegate_erasure(owner, other.cert, root)
    receipt = cas_cluster.nodes[0].erase(root, other.cert, erase_proof(other, root), delegation)
    assert receipt.requester == other.cert.fingerprint
    assert root not in cas_cluster.nodes[0].store


def test_erasure_reports_partitioned_nodes(cas_cluster):
    owner = cas_cluster.owner
    root = cas_cluster.nodes[0].put_bytes(b"partitioned", owner=owner.cert)
    cas_cluster.nodes[2].get_bytes(root)
    cas_cluster.network.partition("cas0", "cas2")
    receipt = cas_cluster.nodes[0].erase(root, owner.cert, erase_proof(owner, root))
    assert receipt.acknowledged == ("cas1",)
    assert receipt.unconfirmed == ("cas2",)
    assert root in cas_cluster.nodes[2].store


def test_first_uploader_stays_owner(cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"x", owner=cas_cluster.owner.cert)
    cas_cluster.nodes[1].put_bytes(b"x", owner=cas_cluster.other.cert)
    assert cas_cluster.registry.owner_of(root).fingerprint == cas_cluster.owner.cert.fingerprint


def test_blockstore_save_and_load(tmp_path, make_cas_cluster):
    cluster = make_cas_cluster(consts=SMALL_CHUNKS)
    node = cluster.nodes[0]
    root = node.put_bytes(b"persist these bytes")
    node.store.save(tmp_path / "cas0")
    loaded = BlockStore.load(tmp_path / "cas0", SMALL_CHUNKS)
    assert set(loaded.cids()) == set(node.store.cids())
    assert loaded.is_pinned(root)
    assert loaded.get(root) == node.store.get(root)


def test_registry_save_and_load(tmp_path, cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"registered", owner=cas_cluster.owner.cert)
    path = tmp_path / "registry.json"
    cas_cluster.registry.save(path)
    loaded = ProviderRegistry.load(path)
    assert loaded.nodes == ["cas0", "cas1", "cas2"]
    assert loaded.find_providers(root) == ["cas0"]
    assert loaded.owner_of(root) == cas_cluster.registry.owner_of(root)


def test_want_from_unknown_organization_is_refused(cas_cluster, entropy):
    root = cas_cluster.nodes[0].put_bytes(b"payload")
    foreign = ca_init("foreign-ca", "foreign", entropy)
    keys = KeyPair.generate(entropy)
    identity = Identity("outsider", foreign.issue_cert("outsider", Role.PEER, keys), keys)
    outsider = CasNode("outsider", identity, cas_cluster.network, cas_cluster.registry,
                       Msp([foreign.root], {foreign.name: foreign.crl}))
    start = len(cas_cluster.network.trace)
    with pytest.raises(IdentityRejected):
        outsider.get_bytes(root)
    assert "block" not in {row.msg_type for row in cas_cluster.network.trace[start:]}
    assert root not in outsider.store


def test_want_from_revoked_node_is_refused(cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"payload")
    cas_cluster.nodes[0].msp.update_crl(cas_cluster.ca.revoke(cas_cluster.nodes[1].identity.cert.serial))
    with pytest.raises(IdentityRejected):
        cas_cluster.nodes[1].get_bytes(root)
    assert cas_cluster.nodes[2].get_bytes(root) == b"payload"


def test_want_with_borrowed_certificate_is_refused(cas_cluster):
    root = cas_cluster.nodes[0].put_bytes(b"payload")
    with pytest.raises(AccessDenied):
        cas_cluster.nodes[1].request("cas0", WANT, encode_want(cas_cluster.nodes[2].identity.cert, [root]))
