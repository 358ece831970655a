from typing import NamedTuple

import pytest

from threatmesh.cas.dag import CasConstants
from threatmesh.cas.node import CasNode
from threatmesh.cas.registry import ProviderRegistry
from threatmesh.config import default_config
from threatmesh.identity.actor import Identity
from threatmesh.identity.ca import CertificateAuthority, Role, ca_init
from threatmesh.identity.keys import KeyPair
from threatmesh.identity.msp import Msp
from threatmesh.netsim.network import NetConfig, Network
from threatmesh.netsim.rng import ENTROPY_STREAM, SeedStream
from threatmesh.simulation import Simulation


class CasCluster(NamedTuple):
    network: Network
    ca: CertificateAuthority
    registry: ProviderRegistry
    nodes: list[CasNode]
    owner: Identity
    other: Identity


def issue_identity(ca: CertificateAuthority, name: str, role: Role, entropy) -> Identity:
    keys = KeyPair.generate(entropy)
    return Identity(name, ca.issue_cert(name, role, keys), keys)


@pytest.fixture
def entropy():
    return SeedStream(0, ENTROPY_STREAM)


@pytest.fixture
def make_cas_cluster(entropy):
    """Factory for a network of content-store nodes sharing one registry and one organization CA."""

    def make(count: int = 3, consts: CasConstants = None, net: NetConfig = None) -> CasCluster:
        network = Network(net or NetConfig(), entropy=entropy)
        ca = ca_init("org-ca", "org", entropy)
        msp = Msp([ca.root], {ca.name: ca.crl})
        registry = ProviderRegistry()
        nodes = [
            CasNode(f"cas{i}", issue_identity(ca, f"cas{i}", Role.PEER, entropy), network, registry, msp.copy(), consts)
            for i in range(count)
        ]
        owner = issue_identity(ca, "owner", Role.CLIENT, entropy)
        other = issue_identity(ca, "other", Role.CLIENT, entropy)
        return CasCluster(network, ca, registry, nodes, owner, other)

    return make


@pytest.fixture
def cas_cluster(make_cas_cluster):
    return make_cas_cluster()


@pytest.fixture
def sim():
    """The default three-organization scenario, bootstrapped."""
    return Simulation(default_config(seed=0))
