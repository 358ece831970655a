"""
Scenario configuration: organizations, channel, endorsement policy, private collections, network,
ordering and content-store settings, read from a YAML file.
"""

import os
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Optional, Union

import yaml

from threatmesh.cas.dag import CasConstants
from threatmesh.errors import ConfigError
from threatmesh.ledger.channel import LedgerConstants
from threatmesh.netsim.network import NetConfig

STATE_ENV = "THREATMESH_STATE"
DEFAULT_STATE_DIR = ".threatmesh"

ENTROPY_MODES = ("seeded", "system")


class OrgSpec(NamedTuple):
    name: str
    peers: int = 1
    clients: tuple[str, ...] = ("client",)


class CollectionSpec(NamedTuple):
    name: str
    member_orgs: tuple[str, ...]


class ScenarioConfig(NamedTuple):
    seed: int = 0
    channel: str = "threatnet"
    # endorsing orgs required per transaction; None means a majority of the orgs
    endorsement: Optional[int] = None
    orgs: tuple[OrgSpec, ...] = (
        OrgSpec("org1", 1, ("client", "analyst")),
        OrgSpec("org2", 1, ("client", "auditor")),
        OrgSpec("org3", 1, ("client",)),
    )
    collections: tuple[CollectionSpec, ...] = (CollectionSpec("grants", ("org1", "org2")),)
    net: NetConfig = NetConfig()
    ledger: LedgerConstants = LedgerConstants()
    cas: CasConstants = CasConstants()
    entropy: str = "seeded"

    @property
    def org_names(self) -> list[str]:
        return [org.name for org in self.orgs]

    @property
    def required_orgs(self) -> int:
        return self.endorsement if self.endorsement is not None else len(self.orgs) // 2 + 1


def default_config(seed: int = 0) -> ScenarioConfig:
    """Three organizations, one peer each, 2-of-3 endorsement and a ``grants`` collection of org1 and org2."""
    return ScenarioConfig(seed=seed, net=NetConfig(seed=seed))


def validate_config(config: ScenarioConfig) -> ScenarioConfig:
    """
    Checks a scenario for consistency.

    Raises: ``ConfigError`` naming the first offending setting.
    """
    if not config.orgs:
        raise ConfigError("a scenario needs at least one organization")
    names = config.org_names
    if len(set(names)) != len(names):
        raise ConfigError(f"organization names must be unique, got {names}")
    for org in config.orgs:
        if org.peers < 1:
            raise ConfigError(f"{org.name} needs at least one peer, got {org.peers}")
        if len(set(org.clients)) != len(org.clients):
            raise ConfigError(f"client names of {org.name} must be unique, got {list(org.clients)}")
        if "admin" in org.clients:
            raise ConfigError(f"{org.name}: 'admin' is reserved for the organization administrator")
    if not 1 <= config.required_orgs <= len(names):
        raise ConfigError(f"endorsement N={config.required_orgs} must be within 1..{len(names)} (the org count)")
    if not 0 <= config.seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {config.seed}")
    if config.entropy not in ENTROPY_MODES:
        raise ConfigError(f"entropy must be one of {ENTROPY_MODES}, got {config.entropy!r}")
    seen = set()
    for collection in config.collections:
        if collection.name in seen:
            raise ConfigError(f"duplicate collection {collection.name!r}")
        seen.add(collection.name)
        unknown = set(collection.member_orgs) - set(names)
        if unknown:
            raise ConfigError(f"collection {collection.name!r} names unknown orgs {sorted(unknown)}")
        # endorsers of a private write come from the collection's orgs only
        if len(set(collection.member_orgs)) < config.required_orgs:
            raise ConfigError(f"collection {collection.name!r} has {len(set(collection.member_orgs))} member orgs, "
                              f"fewer than the endorsement N={config.required_orgs}")
    try:
        config.net.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if config.ledger.BATCH_SIZE < 1 or config.ledger.BATCH_TIMEOUT_TICKS < 1 or config.ledger.BLOCK_INTERVAL_TICKS < 0 \
            or config.ledger.PRIVATE_STASH_TICKS < 1:
        raise ConfigError(f"invalid ledger settings {dict(config.ledger._asdict())}")
    if config.cas.CHUNK_SIZE < 1 or config.cas.CAPACITY_BYTES < 1:
        raise ConfigError(f"invalid cas settings {dict(config.cas._asdict())}")
    return config


def _section(data: Mapping[str, Any], key: str) -> Mapping[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"'{key}' must be a mapping, got {type(value).__name__}")
    return value


def config_from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    """Builds a validated config from parsed YAML; absent keys take the default scenario's values."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"scenario must be a mapping, got {type(data).__name__}")
    known = {"seed", "channel", "endorsement", "orgs", "collections", "net", "ledger", "cas", "entropy"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
    defaults = ScenarioConfig()
    try:
        orgs = defaults.orgs
        if "orgs" in data:
            orgs = tuple(
                OrgSpec(str(org["name"]), int(org.get("peers", 1)), tuple(str(c) for c in org.get("clients", ["client"])))
                for org in data["orgs"] or ()
            )
        collections = defaults.collections
        if "collections" in data:
            collections = tuple(
                CollectionSpec(str(c["name"]), tuple(str(o) for o in c["member_orgs"])) for c in data["collections"] or ()
            )
        net = _section(data, "net")
        ledger = _section(data, "ledger")
        cas = _section(data, "cas")
        config = ScenarioConfig(
            seed=int(data.get("seed", defaults.seed)),
            channel=str(data.get("channel", defaults.channel)),
            endorsement=None if data.get("endorsement") is None else int(data["endorsement"]),
            orgs=orgs,
            collections=collections,
            net=NetConfig(
                seed=int(data.get("seed", defaults.seed)),
                latency_ticks=tuple(int(t) for t in net.get("latency_ticks", defaults.net.latency_ticks)),
                loss_rate=float(net.get("loss_rate", defaults.net.loss_rate)),
                partitions=frozenset(frozenset(map(str, pair)) for pair in net.get("partitions", ()) or ()),
            ),
            ledger=LedgerConstants(
                BATCH_SIZE=int(ledger.get("batch_size", defaults.ledger.BATCH_SIZE)),
                BATCH_TIMEOUT_TICKS=int(ledger.get("batch_timeout", defaults.ledger.BATCH_TIMEOUT_TICKS)),
                BLOCK_INTERVAL_TICKS=int(ledger.get("block_interval", defaults.ledger.BLOCK_INTERVAL_TICKS)),
                PRIVATE_STASH_TICKS=int(ledger.get("private_stash", defaults.ledger.PRIVATE_STASH_TICKS)),
            ),
            cas=CasConstants(
                CHUNK_SIZE=int(cas.get("chunk_size", defaults.cas.CHUNK_SIZE)),
                REPLICATE_ON_FETCH=bool(cas.get("replication", defaults.cas.REPLICATE_ON_FETCH)),
                CAPACITY_BYTES=int(cas.get("capacity_bytes", defaults.cas.CAPACITY_BYTES)),
            ),
            entropy=str(data.get("entropy", defaults.entropy)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed scenario: {e!r}") from e
    if len(config.net.latency_ticks) != 2:
        raise ConfigError(f"net.latency_ticks must be [min, max], got {list(config.net.latency_ticks)}")
    return validate_config(config)


def config_to_dict(config: ScenarioConfig) -> dict:
    return {
        "seed": config.seed,
        "channel": config.channel,
        "endorsement": config.endorsement,
        "orgs": [{"name": o.name, "peers": o.peers, "clients": list(o.clients)} for o in config.orgs],
        "collections": [{"name": c.name, "member_orgs": list(c.member_orgs)} for c in config.collections],
        "net": {
            "latency_ticks": list(config.net.latency_ticks),
            "loss_rate": config.net.loss_rate,
            "partitions": sorted(sorted(pair) for pair in config.net.partitions),
        },
        "ledger": {
            "batch_size": config.ledger.BATCH_SIZE,
            "batch_timeout": config.ledger.BATCH_TIMEOUT_TICKS,
            "block_interval": config.ledger.BLOCK_INTERVAL_TICKS,
            "private_stash": config.ledger.PRIVATE_STASH_TICKS,
        },
        "cas": {
            "chunk_size": config.cas.CHUNK_SIZE,
            "replication": config.cas.REPLICATE_ON_FETCH,
            "capacity_bytes": config.cas.CAPACITY_BYTES,
        },
        "entropy": config.entropy,
    }


def load_config(path: Union[str, Path, None] = None) -> ScenarioConfig:
    """
    Reads a scenario file.

    Args:
        path: YAML file; ``None`` gives the default scenario.

    Raises: ``ConfigError`` if the file is missing, is not YAML or describes an invalid scenario.
    """
    if path is None:
        return validate_config(default_config())
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"scenario {path} is not valid YAML: {e}") from e
    return config_from_dict(data or {})


def save_config(config: ScenarioConfig, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(config), f, default_flow_style=False, sort_keys=False)


def with_orgs(config: ScenarioConfig, count: int) -> ScenarioConfig:
    """The same scenario over ``count`` one-peer orgs sharing one collection; N stays a majority."""
    if count < 1:
        raise ConfigError(f"need at least one org, got {count}")
    orgs = tuple(OrgSpec(f"org{i + 1}", 1, ("client",)) for i in range(count))
    names = tuple(org.name for org in orgs)
    collections = tuple(CollectionSpec(c.name, names) for c in config.collections)
    return validate_config(config._replace(orgs=orgs, collections=collections, endorsement=None))


def state_dir(explicit: Union[str, Path, None] = None) -> Path:
    """``explicit`` if given, else ``$THREATMESH_STATE``, else ``./.threatmesh``."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(STATE_ENV) or DEFAULT_STATE_DIR)
