"""
State directory of a CLI simulation.

Layout::

    config.yaml                      scenario
    sim.json                         tick, epoch, share labels
    msp/<org>.json                   CA root, CRL, CA keys and serial counter
    identities/<actor>.json          certificate and key pair
    orderer/<channel>/blk<n>         the orderer's chain
    peers/<peer>/<channel>/blk<n>    committed blocks with validation flags
    peers/<peer>/<channel>/state.json, private.json
    cas/<node>/blocks/<hex>, cas/<node>/index.json
    registry.json                    provider and owner records
    LOCK                             held while a command runs
"""

import contextlib
import json
import os
import shutil
from pathlib import Path
from typing import Iterator, NamedTuple, Union

from absl import logging

from threatmesh.cas.blockstore import BlockStore
from threatmesh.cas.registry import ProviderRegistry
from threatmesh.config import ScenarioConfig, load_config, save_config
from threatmesh.errors import ConfigError, StateLocked
from threatmesh.identity.actor import Identity
from threatmesh.identity.ca import Certificate, CertificateAuthority, Crl
from threatmesh.identity.keys import KeyPair
from threatmesh.ledger.chain import load_chain, save_chain
from threatmesh.ledger.records import LedgerBlock
from threatmesh.ledger.state import PrivateStore, WorldState
from threatmesh.simulation import Simulation

STATE_FORMAT = 1
LOCK_FILE = "LOCK"


class SavedState(NamedTuple):
    config: ScenarioConfig
    epoch: int
    now: int
    labels: dict
    authorities: dict[str, CertificateAuthority]
    identities: dict[str, Identity]
    orderer_chain: list[LedgerBlock]
    ledgers: dict[str, tuple[list[LedgerBlock], WorldState, PrivateStore]]
    stores: dict[str, BlockStore]
    registry: ProviderRegistry


@contextlib.contextmanager
def state_lock(directory: Union[str, Path]) -> Iterator[Path]:
    """
    Holds the state directory's lock file for the duration of a command.

    Raises: ``StateLocked`` if another command holds it.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / LOCK_FILE
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise StateLocked(f"{directory} is locked by another command (remove {path} if it is stale)") from e
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        path.unlink(missing_ok=True)


def is_initialized(directory: Union[str, Path]) -> bool:
    return (Path(directory) / "sim.json").exists()


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, sort_keys=True, indent=1))
    os.replace(tmp, path)


def _read_json(path: Path):
    return json.loads(path.read_text())


def _keys_to_json(keys: KeyPair) -> list[str]:
    return [part.hex() for part in keys.private_bytes()]


def _keys_from_json(data) -> KeyPair:
    return KeyPair.from_private_bytes(bytes.fromhex(data[0]), bytes.fromhex(data[1]))


def clear_state(directory: Union[str, Path]) -> None:
    """Removes everything but the lock file."""
    for entry in Path(directory).iterdir():
        if entry.name == LOCK_FILE:
            continue
        if entry.is_dir():
            shutil.rmtree(entry)
        else:
            entry.unlink()


def save_state(sim, directory: Union[str, Path]) -> None:
    """Writes a settled simulation to ``directory``."""
    directory = Path(directory)
    sim.settle()
    save_config(sim.config, directory / "config.yaml")
    for org, ca in sim.authorities.items():
        _write_json(directory / "msp" / f"{org}.json", {
            "name": ca.name,
            "organization": ca.organization,
            "root": ca.root.to_bytes().hex(),
            "crl": ca.crl.to_bytes().hex(),
            "keys": _keys_to_json(ca.keys),
            "next_serial": ca.next_serial,
            "issued": sorted(ca.issued_serials),
        })
    for name, identity in sim.identities.items():
        _write_json(directory / "identities" / f"{name}.json", {
            "name": name,
            "cert": identity.cert.to_bytes().hex(),
            "keys": _keys_to_json(identity.keys),
        })
    channel = sim.channel.name
    save_chain(sim.orderer.chain(channel), str(directory / "orderer" / channel))
    for name, peer in sim.peers.items():
        ledger = peer.ledger(channel)
        peer_dir = directory / "peers" / name / channel
        save_chain(ledger.blocks, str(peer_dir))
        _write_json(peer_dir / "state.json", ledger.state.to_json())
        _write_json(peer_dir / "private.json", ledger.private.to_json())
    for node in sim.cas_nodes.values():
        node.store.save(directory / "cas" / node.node_id)
    sim.registry.save(directory / "registry.json")
    # sim.json last: its presence marks a complete state directory
    _write_json(directory / "sim.json", {
        "format": STATE_FORMAT,
        "epoch": sim.epoch,
        "now": sim.now,
        "labels": sim.labels,
    })
    logging.info("saved state at tick %d to %s", sim.now, directory)


def load_state(directory: Union[str, Path]) -> SavedState:
    """
    Reads a state directory written by :func:`save_state`. The epoch is advanced so the next run
    draws fresh but reproducible randomness.

    Raises: ``ConfigError`` if the directory holds no complete state.
    """
    directory = Path(directory)
    if not is_initialized(directory):
        raise ConfigError(f"{directory} holds no simulation state; run 'threatmesh setup' first")
    sim = _read_json(directory / "sim.json")
    if sim.get("format") != STATE_FORMAT:
        raise ConfigError(f"{directory} uses state format {sim.get('format')}, expected {STATE_FORMAT}")
    config = load_config(directory / "config.yaml")
    try:
        authorities = {}
        for path in sorted((directory / "msp").glob("*.json")):
            data = _read_json(path)
            authorities[path.stem] = CertificateAuthority(
                data["name"], data["organization"], _keys_from_json(data["keys"]),
                Certificate.from_bytes(bytes.fromhex(data["root"])), Crl.from_bytes(bytes.fromhex(data["crl"])),
                next_serial=data["next_serial"], issued=set(data["issued"]),
            )
        identities = {}
        for path in sorted((directory / "identities").glob("*.json")):
            data = _read_json(path)
            identities[data["name"]] = Identity(
                data["name"], Certificate.from_bytes(bytes.fromhex(data["cert"])), _keys_from_json(data["keys"]))
        ledgers = {}
        for peer_dir in sorted((directory / "peers").iterdir()):
            channel_dir = peer_dir / config.channel
            ledgers[peer_dir.name] = (
                load_chain(str(channel_dir)),
                WorldState.from_json(_read_json(channel_dir / "state.json")),
                PrivateStore.from_json(_read_json(channel_dir / "private.json")),
            )
        stores = {node_dir.name: BlockStore.load(node_dir, config.cas) for node_dir in sorted((directory / "cas").iterdir())}
        registry = ProviderRegistry.load(directory / "registry.json")
        orderer_chain = load_chain(str(directory / "orderer" / config.channel))
    except (OSError, KeyError, ValueError) as e:
        raise ConfigError(f"state in {directory} is incomplete or corrupt: {e}") from e
    return SavedState(
        config=config,
        epoch=int(sim["epoch"]) + 1,
        now=int(sim["now"]),
        labels=dict(sim.get("labels", {})),
        authorities=authorities,
        identities=identities,
        orderer_chain=orderer_chain,
        ledgers=ledgers,
        stores=stores,
        registry=registry,
    )


def open_simulation(directory: Union[str, Path]):
    """Loads the saved simulation of ``directory``."""
    saved = load_state(directory)
    return Simulation(saved.config, saved)
