"""
Command-line entry point.

Every command runs against the state directory given by ``--state``, ``$THREATMESH_STATE`` or
``./.threatmesh``. Commands that change the simulation load it, act, and save it back under the
directory's lock. Each failure exits with the code of its error class (see ``docs``); argument
errors exit with 2, success with 0.
"""

import argparse
import json
import sys
from typing import Optional, Sequence

from absl import logging

from threatmesh import persistence
from threatmesh.attck.layers import save_layer, serialize_layer
from threatmesh.bench import bench, write_csv
from threatmesh.config import load_config, state_dir
from threatmesh.errors import ConfigError, NotFound, ThreatMeshError
from threatmesh.netsim.script import load_script
from threatmesh.simulation import Simulation


def _split(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _error_text(error: ThreatMeshError) -> str:
    text = str(error)
    name = type(error).__name__
    return text if text.startswith(name) else f"{name}: {text}"


def _sender_of(sim: Simulation, cid: str) -> str:
    """The client actor that shared ``cid``."""
    record = next(iter(sim.clients.values())).share_record(cid)
    for name, client in sim.clients.items():
        if client.did == record.sender_did:
            return name
    raise NotFound(f"the sender of {cid} is not an actor of this simulation")


def cmd_setup(args) -> int:
    directory = state_dir(args.state)
    config = load_config(args.config)
    with persistence.state_lock(directory):
        if persistence.is_initialized(directory):
            if not args.force:
                raise ConfigError(f"{directory} already holds a simulation; pass --force to replace it")
            persistence.clear_state(directory)
        sim = Simulation(config)
        persistence.save_state(sim, directory)
    print(f"initialized {directory}: {len(config.orgs)} orgs, channel {sim.channel.name}, "
          f"genesis block 0 of {len(sim.orderer.chain(sim.channel.name))} blocks")
    for name in sorted(sim.clients):
        print(f"  {name:<20} {sim.did_of(name)}")
    return 0


def _mutate(args, action) -> int:
    """Loads the simulation, runs ``action(sim)`` and saves the result, also after a failed action."""
    directory = state_dir(args.state)
    with persistence.state_lock(directory):
        sim = persistence.open_simulation(directory)
        try:
            return action(sim)
        finally:
            persistence.save_state(sim, directory)


def cmd_share(args) -> int:
    def action(sim: Simulation) -> int:
        layer = sim.read_layer(args.layer)
        recipients = [sim.resolve_recipient(token) for token in _split(args.to or "")]
        receipt = sim.client(args.actor).share_threat(layer, recipients, args.name)
        if args.label:
            sim.labels[args.label] = str(receipt.cid)
        print(f"{receipt.cid} {receipt.tx_id}")
        return 0

    return _mutate(args, action)


def cmd_fetch(args) -> int:
    def action(sim: Simulation) -> int:
        layer = sim.client(args.actor).fetch_threat(sim._cid(args.cid))
        if args.out:
            save_layer(layer, args.out)
        else:
            print(serialize_layer(layer))
        return 0

    return _mutate(args, action)


def cmd_compare(args) -> int:
    cids = _split(args.cids)
    if len(cids) != 2:
        raise ConfigError(f"--cids takes exactly two cids, got {len(cids)}")

    def action(sim: Simulation) -> int:
        layer = sim.client(args.actor).compare_shared(sim._cid(cids[0]), sim._cid(cids[1]))
        if args.out:
            save_layer(layer, args.out)
        else:
            print(serialize_layer(layer))
        return 0

    return _mutate(args, action)


def cmd_grant(args) -> int:
    def action(sim: Simulation) -> int:
        status = sim.client(args.actor).grant_access(sim._cid(args.cid), sim.resolve_recipient(args.did))
        print(status.tx_id)
        return 0

    return _mutate(args, action)


def cmd_revoke_access(args) -> int:
    def action(sim: Simulation) -> int:
        cid = sim._cid(args.cid)
        actor = args.actor or _sender_of(sim, cid)
        status = sim.client(actor).revoke_access(cid, sim.resolve_recipient(args.did))
        print(status.tx_id)
        return 0

    return _mutate(args, action)


def cmd_erase(args) -> int:
    def action(sim: Simulation) -> int:
        receipt = sim.client(args.actor).erase(sim._cid(args.cid))
        print(f"erased {receipt.cid}: {receipt.deleted_blocks} local block(s), "
              f"confirmed by {', '.join(receipt.acknowledged) or 'no other node'}")
        if receipt.unconfirmed:
            print(f"unconfirmed: {', '.join(receipt.unconfirmed)}")
        return 0

    return _mutate(args, action)


def cmd_revoke_cert(args) -> int:
    def action(sim: Simulation) -> int:
        crl = sim.revoke_cert(args.serial, args.org)
        print(f"{crl.issuer} revoked serial {args.serial}; CRL now lists {sorted(crl.revoked_serials)}")
        return 0

    return _mutate(args, action)


def cmd_run(args) -> int:
    steps = load_script(args.script)

    def action(sim: Simulation) -> int:
        results = sim.run_script(steps)
        for result in results:
            step = result.step
            outcome = result.value if result.ok else result.error
            if result.ok and step.command in ("fetch", "compare"):
                outcome = "ok"
            print(f"tick {step.tick}: {step.actor} {step.command} -> {outcome}")
        if args.trace:
            sim.network.export_trace(args.trace)
        return 0 if all(result.ok for result in results) else 1

    return _mutate(args, action)


def cmd_bench(args) -> int:
    directory = state_dir(args.state)
    if not persistence.is_initialized(directory):
        raise ConfigError(f"{directory} holds no simulation state; run 'threatmesh setup' first")
    config = load_config(directory / "config.yaml")
    if args.batch_size is not None:
        config = config._replace(ledger=config.ledger._replace(BATCH_SIZE=args.batch_size))
    report = bench(config, args.txs, args.orgs)
    write_csv(report, args.out)
    print(report.summary())
    return 0


def cmd_show(args) -> int:
    directory = state_dir(args.state)
    with persistence.state_lock(directory):
        sim = persistence.open_simulation(directory)
    if args.cid:
        viewer = sim.client(args.actor) if args.actor else next(iter(sim.clients.values()))
        print(json.dumps(viewer.share_record(sim._cid(args.cid)).to_dict(), indent=2, sort_keys=True))
        return 0
    print(f"channel {sim.channel.name} at tick {sim.now}, height {len(sim.orderer.chain(sim.channel.name))}")
    for name, identity in sorted(sim.identities.items()):
        did = sim.did_of(name) if name in sim.clients else ""
        print(f"  {name:<20} {identity.cert.role.value:<8} serial {identity.cert.serial:<4} {did}")
    for label, cid in sorted(sim.labels.items()):
        print(f"  @{label} = {cid}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threatmesh",
        description="Share MITRE ATT&CK threat layers between organizations over a simulated permissioned ledger.",
    )
    parser.add_argument("--state", type=str, default=None, help="State directory (default: $THREATMESH_STATE or ./.threatmesh).")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="Verbose mode; repeat for debug output.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("setup", help="Create CAs, identities, DIDs and the channel genesis block.")
    p.add_argument("--config", type=str, default=None, help="Scenario YAML file (default: the 3-org scenario).")
    p.add_argument("--force", action="store_true", help="Replace an existing simulation.")
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("share", help="Encrypt, upload and record a layer for recipients.")
    p.add_argument("--as", dest="actor", required=True, help="Sending client, e.g. org1-client.")
    p.add_argument("--layer", required=True, help="Navigator layer file or bundled fixture name.")
    p.add_argument("--to", default="", help="Comma-separated recipient DIDs (actor names are accepted too).")
    p.add_argument("--name", default=None, help="Public threat name (default: the layer's name).")
    p.add_argument("--label", default=None, help="Remember the cid as @LABEL.")
    p.set_defaults(func=cmd_share)

    p = sub.add_parser("fetch", help="Fetch, verify and decrypt a shared layer.")
    p.add_argument("--as", dest="actor", required=True)
    p.add_argument("--cid", required=True)
    p.add_argument("--out", default=None, help="Output layer file (default: stdout).")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("compare", help="Overlap two shared layers.")
    p.add_argument("--as", dest="actor", required=True)
    p.add_argument("--cids", required=True, help="Two comma-separated cids.")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("grant", help="Grant one more recipient access to a share.")
    p.add_argument("--as", dest="actor", required=True)
    p.add_argument("--cid", required=True)
    p.add_argument("--did", required=True)
    p.set_defaults(func=cmd_grant)

    p = sub.add_parser("revoke-access", help="Remove a recipient's grant.")
    p.add_argument("--as", dest="actor", default=None, help="Sender of the share (default: looked up).")
    p.add_argument("--cid", required=True)
    p.add_argument("--did", required=True)
    p.set_defaults(func=cmd_revoke_access)

    p = sub.add_parser("erase", help="Erase shared content from every content-store node.")
    p.add_argument("--as", dest="actor", required=True)
    p.add_argument("--cid", required=True)
    p.set_defaults(func=cmd_erase)

    p = sub.add_parser("revoke-cert", help="Revoke a certificate by serial.")
    p.add_argument("--serial", type=int, required=True)
    p.add_argument("--org", default=None, help="Issuing organization, needed when the serial is ambiguous.")
    p.set_defaults(func=cmd_revoke_cert)

    p = sub.add_parser("bench", help="Measure commit latency and throughput of share transactions.")
    p.add_argument("--txs", type=int, required=True)
    p.add_argument("--orgs", type=int, default=None, help="Organization count (default: as configured).")
    p.add_argument("--batch-size", type=int, default=None, help="Override the orderer batch size.")
    p.add_argument("--out", required=True, help="CSV output file.")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", help="Execute a scenario script.")
    p.add_argument("--script", required=True)
    p.add_argument("--trace", default=None, help="Export the network trace as CSV.")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("show", help="List actors, or render a share record as JSON.")
    p.add_argument("--cid", default=None)
    p.add_argument("--as", dest="actor", default=None)
    p.set_defaults(func=cmd_show)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.set_verbosity(logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ThreatMeshError as e:
        print(f"error: {_error_text(e)}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        error = ConfigError(str(e))
        print(f"error: {_error_text(error)}", file=sys.stderr)
        return error.exit_code
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
