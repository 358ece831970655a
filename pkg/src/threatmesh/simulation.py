"""
A complete multi-organization threat-sharing network inside one deterministic event loop.

Node naming: ``<org>-ca``, ``<org>-peer<i>``, ``<org>-cas``, ``<org>-admin``, ``<org>-<client>`` and
the single ``orderer`` of the ``orderer`` organization.
"""

import os
from typing import NamedTuple, Optional, Sequence

from absl import logging

from threatmesh.attck.layers import Layer, list_fixtures, load_fixture, load_layer, save_layer, serialize_layer
from threatmesh.cas.blockstore import BlockStore
from threatmesh.cas.cid import parse_cid
from threatmesh.cas.node import CasNode
from threatmesh.cas.registry import ProviderRegistry
from threatmesh.config import ScenarioConfig, default_config, validate_config
from threatmesh.errors import ConfigError, ThreatMeshError, UnknownNode, UnknownSerial
from threatmesh.identity.actor import Identity
from threatmesh.identity.ca import CertificateAuthority, Role, ca_init
from threatmesh.identity.did import DID_PREFIX, publish_did
from threatmesh.identity.keys import Entropy, KeyPair
from threatmesh.identity.msp import Msp
from threatmesh.ledger.channel import ChannelConfig, CollectionConfig, EndorsementPolicy
from threatmesh.ledger.gateway import Gateway
from threatmesh.ledger.orderer import SoloOrderer
from threatmesh.ledger.peer import Peer
from threatmesh.netsim.network import Network
from threatmesh.netsim.rng import ENTROPY_STREAM, SeedStream, SystemEntropy
from threatmesh.netsim.script import ScriptStep
from threatmesh.protocol.sharing import SharingClient

ORDERER = "orderer"
ORDERER_ORG = "orderer"


class ScriptResult(NamedTuple):
    step: ScriptStep
    ok: bool
    value: str = ""
    error: str = ""


class Simulation:
    """
    Builds every node of a scenario and, unless restoring saved state, bootstraps the channel:
    genesis block, peers joined, clients subscribed to block events and every client DID published.

    Args:
        config: The scenario; defaults to :func:`~threatmesh.config.default_config`.
        saved: State read by :func:`threatmesh.persistence.load_state`, to continue a previous run.
    """

    def __init__(self, config: Optional[ScenarioConfig] = None, saved=None):
        self.config = validate_config(config or default_config())
        self.epoch = saved.epoch if saved is not None else 0
        self.entropy: Entropy = (SeedStream(self.config.seed, ENTROPY_STREAM, self.epoch)
                                 if self.config.entropy == "seeded" else SystemEntropy())
        self.network = Network(self.config.net._replace(seed=self.config.seed), self.epoch, self.entropy,
                               saved.now if saved is not None else 0)
        self.registry: ProviderRegistry = saved.registry if saved is not None else ProviderRegistry()
        self.labels: dict[str, str] = dict(saved.labels) if saved is not None else {}

        if saved is None:
            self.authorities = {org: ca_init(f"{org}-ca", org, self.entropy)
                                for org in [*self.config.org_names, ORDERER_ORG]}
            self.identities: dict[str, Identity] = {}
            self._issue_identities()
        else:
            self.authorities = dict(saved.authorities)
            self.identities = dict(saved.identities)

        msp = Msp([ca.root for ca in self.authorities.values()], {ca.name: ca.crl for ca in self.authorities.values()})
        self.channel = ChannelConfig(
            name=self.config.channel,
            policy=EndorsementPolicy(self.config.required_orgs, frozenset(self.config.org_names)),
            collections=tuple(CollectionConfig(c.name, frozenset(c.member_orgs)) for c in self.config.collections),
            orderer=self.identities[ORDERER].cert,
        )
        self._build_nodes(msp, saved)
        if saved is None:
            self._bootstrap()
        else:
            self._restore(saved)

    # construction
    def _issue(self, org: str, name: str, role: Role) -> Identity:
        keys = KeyPair.generate(self.entropy)
        cert = self.authorities[org].issue_cert(name, role, keys)
        self.identities[name] = Identity(name, cert, keys)
        return self.identities[name]

    def _issue_identities(self) -> None:
        self._issue(ORDERER_ORG, ORDERER, Role.ORDERER)
        for org in self.config.orgs:
            for i in range(org.peers):
                self._issue(org.name, f"{org.name}-peer{i}", Role.PEER)
            self._issue(org.name, f"{org.name}-cas", Role.PEER)
            self._issue(org.name, f"{org.name}-admin", Role.ADMIN)
            for client in org.clients:
                self._issue(org.name, f"{org.name}-{client}", Role.CLIENT)

    def _build_nodes(self, msp: Msp, saved) -> None:
        self.orderer = SoloOrderer(ORDERER, self.identities[ORDERER], self.network, self.config.ledger)
        self.peers: dict[str, Peer] = {}
        self.peers_by_org: dict[str, list[str]] = {}
        self.cas_nodes: dict[str, CasNode] = {}
        self.gateways: dict[str, Gateway] = {}
        self.clients: dict[str, SharingClient] = {}
        for org in self.config.orgs:
            names = [f"{org.name}-peer{i}" for i in range(org.peers)]
            for name in names:
                self.peers[name] = Peer(name, self.identities[name], self.network, msp.copy(), ORDERER,
                                        self.config.ledger)
            self.peers_by_org[org.name] = names
        for org in self.config.orgs:
            name = f"{org.name}-cas"
            store = saved.stores.get(name) if saved is not None else None
            self.cas_nodes[org.name] = CasNode(name, self.identities[name], self.network, self.registry, msp.copy(),
                                               self.config.cas, store or BlockStore(self.config.cas))
            for actor in [f"{org.name}-admin", *(f"{org.name}-{c}" for c in org.clients)]:
                self.gateways[actor] = Gateway(actor, self.identities[actor], self.network, self.channel,
                                               self.peers_by_org, ORDERER, self.entropy, self.config.ledger)
            for client in org.clients:
                actor = f"{org.name}-{client}"
                self.clients[actor] = SharingClient(self.identities[actor], self.gateways[actor],
                                                    self.cas_nodes[org.name], self.entropy)

    def _subscribe_all(self) -> None:
        for gateway in self.gateways.values():
            gateway.subscribe()

    def _bootstrap(self) -> None:
        genesis = self.orderer.create_channel(self.channel, self.peers)
        for peer in self.peers.values():
            peer.join_channel(genesis)
        self._subscribe_all()
        for name, client in self.clients.items():
            publish_did(client.identity, client.cas, client.gateway)
        self.settle()
        logging.info("simulation ready: %d orgs, %d peers, %d clients on channel %s",
                     len(self.config.orgs), len(self.peers), len(self.clients), self.channel.name)

    def _restore(self, saved) -> None:
        self.orderer.restore_channel(saved.orderer_chain, self.peers)
        for name, (blocks, state, private) in saved.ledgers.items():
            self.peers[name].restore_channel(blocks, state, private)
        self._subscribe_all()
        self.settle()
        logging.info("restored simulation at tick %d (epoch %d)", self.now, self.epoch)

    # access
    @property
    def now(self) -> int:
        return self.network.now

    def settle(self) -> int:
        """Runs the network until nothing is in flight."""
        return self.network.run_until_idle()

    def identity(self, name: str) -> Identity:
        if name not in self.identities:
            raise UnknownNode(f"unknown actor {name!r}; known: {sorted(self.identities)}")
        return self.identities[name]

    def client(self, name: str) -> SharingClient:
        if name not in self.clients:
            raise UnknownNode(f"{name!r} is not a client actor; clients: {sorted(self.clients)}")
        return self.clients[name]

    def admin(self, org: str) -> Gateway:
        name = f"{org}-admin"
        if name not in self.gateways:
            raise UnknownNode(f"no organization {org!r}")
        return self.gateways[name]

    def did_of(self, name: str) -> str:
        return self.identity(name).did

    def resolve_recipient(self, token: str) -> str:
        """A DID is taken as is; an actor name becomes that actor's DID."""
        token = token.strip()
        if token.startswith(DID_PREFIX) or token not in self.identities:
            return token
        return self.did_of(token)

    def peer_list(self) -> list[Peer]:
        return list(self.peers.values())

    def ledgers_consistent(self) -> bool:
        """True iff every peer holds the same chain bytes and public state hash."""
        peers = self.peer_list()
        reference = peers[0]
        return all(
            p.chain_bytes(self.channel.name) == reference.chain_bytes(self.channel.name)
            and p.state_hash(self.channel.name) == reference.state_hash(self.channel.name)
            for p in peers[1:]
        )

    def find_serial(self, serial: int, org: Optional[str] = None) -> tuple[str, Optional[Identity]]:
        """
        The organization whose CA issued ``serial``, and the actor holding it if any.

        Raises: ``UnknownSerial`` if no CA issued it; ``ConfigError`` if several did and ``org`` is not given.
        """
        if org is not None:
            if org not in self.authorities:
                raise ConfigError(f"no organization {org!r}")
            candidates = [org] if serial in self.authorities[org].issued_serials else []
        else:
            candidates = [o for o, ca in self.authorities.items() if serial in ca.issued_serials]
        if not candidates:
            raise UnknownSerial(f"serial {serial} was not issued by {org or 'any'} CA")
        if len(candidates) > 1:
            holders = [f"{o} ({self._holder(o, serial).name})" for o in candidates if self._holder(o, serial)]
            raise ConfigError(f"serial {serial} is ambiguous across {holders or candidates}; name the organization")
        return candidates[0], self._holder(candidates[0], serial)

    def _holder(self, org: str, serial: int) -> Optional[Identity]:
        for identity in self.identities.values():
            if identity.cert.organization == org and identity.cert.serial == serial:
                return identity
        return None

    # operations
    def revoke_cert(self, serial: int, org: Optional[str] = None):
        """
        Revokes a certificate: the CA re-signs its CRL, the organization's admin commits it through
        ``mspconfig.update_crl`` so every peer applies it at the same block, and the content-store
        nodes take it over directly.

        Returns: The new CRL.
        """
        org, holder = self.find_serial(serial, org)
        ca: CertificateAuthority = self.authorities[org]
        crl = ca.revoke(serial, self.now)
        if org != ORDERER_ORG:
            self.admin(org).transact("mspconfig", "update_crl", [crl.to_bytes()])
        else:
            for peer in self.peers.values():
                peer.msp.update_crl(crl)
        for node in self.cas_nodes.values():
            node.msp.update_crl(crl)
        logging.info("revoked serial %d of %s%s", serial, org, f" ({holder.name})" if holder else "")
        return crl

    def read_layer(self, source: str) -> Layer:
        """A fixture name or a path to a Navigator layer file."""
        if source in list_fixtures():
            return load_fixture(source)
        if not os.path.exists(source):
            raise ConfigError(f"no layer file or fixture named {source!r}; fixtures: {list_fixtures()}")
        return load_layer(source)

    def _cid(self, token: str) -> str:
        if token.startswith("@"):
            if token[1:] not in self.labels:
                raise ConfigError(f"no share labelled {token[1:]!r}")
            return self.labels[token[1:]]
        return str(parse_cid(token))

    def run_script(self, steps: Sequence[ScriptStep]) -> list[ScriptResult]:
        """
        Executes scenario steps at their ticks. A failing step is recorded and the script goes on.

        Commands (the actor is the acting client, admin or ``net``)::

            share <layer> <recipient,...|-> [label]   grant <cid> <recipient>
            fetch <cid> [out]                          revoke-access <cid> <recipient>
            compare <cid> <cid> [out]                  erase <cid>
            revoke-cert <serial|actor>                 partition <a> <b> / heal <a> <b>

        A cid argument may be ``@label`` for a share labelled earlier in the script.
        """
        results = []
        for step in steps:
            if step.tick > self.now:
                self.network.advance_to(step.tick)
            try:
                value = self._run_step(step)
                results.append(ScriptResult(step, True, value))
            except ThreatMeshError as e:
                logging.info("script line %d (%s %s) failed: %s", step.line, step.actor, step.command, e)
                results.append(ScriptResult(step, False, error=f"{type(e).__name__}: {e}"))
        self.settle()
        return results

    def _args(self, step: ScriptStep, low: int, high: int) -> tuple[str, ...]:
        if not low <= len(step.args) <= high:
            raise ConfigError(f"script line {step.line}: {step.command} takes {low}..{high} arguments, got {len(step.args)}")
        return step.args

    def _run_step(self, step: ScriptStep) -> str:
        command = step.command
        if command in ("partition", "heal"):
            a, b = self._args(step, 2, 2)
            (self.network.partition if command == "partition" else self.network.heal)(a, b)
            return f"{a} {b}"
        if command == "revoke-cert":
            (target,) = self._args(step, 1, 1)
            if target.isdigit():
                serial, org = int(target), self.identity(step.actor).organization
            else:
                serial, org = self.identity(target).cert.serial, self.identity(target).organization
            self.revoke_cert(serial, org)
            return str(serial)

        client = self.client(step.actor)
        if command == "share":
            args = self._args(step, 2, 3)
            layer = self.read_layer(args[0])
            recipients = [] if args[1] == "-" else [self.resolve_recipient(t) for t in args[1].split(",") if t]
            receipt = client.share_threat(layer, recipients)
            label = args[2] if len(args) > 2 else layer.name
            self.labels[label] = str(receipt.cid)
            return str(receipt.cid)
        if command == "fetch":
            args = self._args(step, 1, 2)
            layer = client.fetch_threat(self._cid(args[0]))
            if len(args) > 1:
                save_layer(layer, args[1])
            return serialize_layer(layer)
        if command == "compare":
            args = self._args(step, 2, 3)
            layer = client.compare_shared(self._cid(args[0]), self._cid(args[1]))
            if len(args) > 2:
                save_layer(layer, args[2])
            return serialize_layer(layer)
        if command == "grant":
            cid, recipient = self._args(step, 2, 2)
            return client.grant_access(self._cid(cid), self.resolve_recipient(recipient)).tx_id
        if command == "revoke-access":
            cid, recipient = self._args(step, 2, 2)
            return client.revoke_access(self._cid(cid), self.resolve_recipient(recipient)).tx_id
        if command == "erase":
            (cid,) = self._args(step, 1, 1)
            receipt = client.erase(self._cid(cid))
            return ",".join(receipt.acknowledged)
        raise ConfigError(f"script line {step.line}: unknown command {command!r}")
