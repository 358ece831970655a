import csv

import pytest

from threatmesh.errors import ConfigError, ExchangeTimeout, NotFound, Partitioned, ThreatMeshError, UnknownNode
from threatmesh.identity.ca import Role, ca_init
from threatmesh.netsim.network import Message, NetConfig, Network
from threatmesh.netsim.node import SimNode
from threatmesh.netsim.rng import ENTROPY_STREAM, NET_STREAM, SeedStream
from threatmesh.netsim.script import parse_script
from threatmesh.wrappers import RecordingWrapper

from conftest import issue_identity

MARKER = b"do-not-leak-this-marker-0123456789"


def _missing(sender, message):
    raise NotFound("nothing here")


def _network(entropy, config: NetConfig = None) -> tuple[Network, SimNode, SimNode]:
    network = Network(config or NetConfig(), entropy=entropy)
    ca = ca_init("net-ca", "net", entropy)
    a = SimNode("a", issue_identity(ca, "a", Role.PEER, entropy), network)
    b = SimNode("b", issue_identity(ca, "b", Role.PEER, entropy), network)
    b.on("ping", lambda sender, message: Message("pong", message.body))
    b.on("missing", _missing)
    return network, a, b


def test_seed_stream_is_deterministic():
    a, b = SeedStream(42), SeedStream(42)
    assert a.token_bytes(100) == b.token_bytes(100)
    assert SeedStream(42, NET_STREAM).token_bytes(16) != SeedStream(42, ENTROPY_STREAM).token_bytes(16)
    assert SeedStream(42, epoch=0).token_bytes(16) != SeedStream(42, epoch=1).token_bytes(16)
    assert SeedStream(2**63).token_bytes(8) != SeedStream(0).token_bytes(8)
    stream = SeedStream(1, buffer_words=4)
    draws = [stream.randint(3, 5) for _ in range(200)]
    assert set(draws) == {3, 4, 5}
    assert all(0.0 <= stream.uniform() < 1.0 for _ in range(100))
    with pytest.raises(ValueError):
        SeedStream(-1)
    with pytest.raises(ValueError):
        stream.randint(2, 1)


def test_request_reply(entropy):
    network, a, b = _network(entropy)
    reply = a.request("b", "ping", b"hello")
    assert reply.kind == "pong"
    assert reply.body == b"hello"
    assert [row.msg_type for row in network.trace] == ["ping", "pong"]
    assert network.sent == network.delivered == 2


def test_error_replies_are_raised_by_the_caller(entropy):
    _, a, _ = _network(entropy)
    with pytest.raises(NotFound, match="nothing here"):
        a.request("b", "missing")
    with pytest.raises(ThreatMeshError, match="cannot handle"):
        a.request("b", "unknown-kind")


def test_latency_stays_in_range(entropy):
    network, a, _ = _network(entropy, NetConfig(latency_ticks=(2, 7)))
    envelopes = []
    network.taps.append(envelopes.append)
    for _ in range(200):
        a.notify("b", "ping")
    delays = {e.deliver_at - e.sent_at for e in envelopes}
    assert delays <= set(range(2, 8))
    assert len(delays) > 1


def test_lossy_link(entropy):
    network, a, _ = _network(entropy, NetConfig(loss_rate=1.0))
    with pytest.raises(ExchangeTimeout):
        a.request("b", "ping", timeout_ticks=10)
    assert network.dropped == 1
    assert network.trace == []


def test_partition_and_heal(entropy):
    network, a, _ = _network(entropy)
    network.partition("b", "a")
    with pytest.raises(Partitioned):
        a.request("b", "ping")
    network.heal("a", "b")
    assert a.request("b", "ping").kind == "pong"


def test_unknown_node(entropy):
    network, a, _ = _network(entropy)
    with pytest.raises(UnknownNode):
        a.send("nobody", "ping")
    with pytest.raises(UnknownNode):
        network.public_key_of("nobody")


def test_schedule_is_a_function_of_the_seed():
    def schedule(seed: int) -> list:
        network, a, _ = _network(SeedStream(0, ENTROPY_STREAM), NetConfig(seed=seed, latency_ticks=(1, 10), loss_rate=0.2))
        for i in range(50):
            a.notify("b", "ping", bytes([i]))
        network.run_until_idle()
        return [tuple(row) for row in network.trace]

    assert schedule(1) == schedule(1)
    assert schedule(1) != schedule(2)


def test_envelopes_are_sealed(entropy):
    network, a, _ = _network(entropy)
    envelopes = []
    network.taps.append(envelopes.append)
    a.request("b", "ping", MARKER)
    assert envelopes
    assert all(MARKER not in e.payload for e in envelopes)


def test_tampered_envelope_is_discarded(entropy):
    network, a, b = _network(entropy)
    recorder = RecordingWrapper(b)
    envelopes = []
    network.taps.append(envelopes.append)
    a.notify("b", "ping")
    network.run_until_idle()
    assert recorder.counts["ping"] == 1
    original = envelopes[0]
    for i in range(0, len(original.payload), 7):
        flipped = bytearray(original.payload)
        flipped[i] ^= 0x01
        network._deliver(original.replace(payload=bytes(flipped)))
    assert recorder.counts["ping"] == 1


def test_timers_and_run_until(entropy):
    network, _, _ = _network(entropy)
    fired = []
    network.call_later(5, lambda: fired.append(network.now))
    network.call_later(2, lambda: fired.append(network.now))
    network.run_until_idle()
    assert fired == [2, 5]
    start = network.now
    assert not network.run_until(lambda: False, 20)
    assert network.now == start + 20
    network.advance_to(40)
    assert network.now == 40


def test_recording_wrapper_proxies_the_node(entropy):
    network, a, b = _network(entropy)
    recorder = RecordingWrapper(b)
    a.request("b", "ping")
    a.request("b", "ping")
    assert recorder.counts["ping"] == 2
    assert recorder.node_id == "b"
    assert recorder.unwrapped is b
    assert recorder.received[0][1:] == ("a", "ping")


def test_export_trace(tmp_path, entropy):
    network, a, _ = _network(entropy)
    a.request("b", "ping")
    path = tmp_path / "trace.csv"
    network.export_trace(path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["tick", "from", "to", "msg_type", "size"]
    assert [row[1:4] for row in rows[1:]] == [["a", "b", "ping"], ["b", "a", "pong"]]


def test_bad_net_config():
    with pytest.raises(ValueError):
        Network(NetConfig(latency_ticks=(3, 1)))
    with pytest.raises(ValueError):
        Network(NetConfig(loss_rate=1.5))


def test_parse_script():
    steps = parse_script(
        "# scenario\n"
        "tick 10: org2-client fetch @wp out.json\n"
        "\n"
        "tick 1: org1-client share wicked_panda_G0096 org2-client wp  # first\n"
        "tick 10: org1-client erase \"@wp\"\n"
    )
    assert [(s.tick, s.actor, s.command) for s in steps] == [
        (1, "org1-client", "share"), (10, "org2-client", "fetch"), (10, "org1-client", "erase")]
    assert steps[0].args == ("wicked_panda_G0096", "org2-client", "wp")
    assert steps[2].args == ("@wp",)
    assert steps[0].line == 4
    with pytest.raises(ConfigError):
        parse_script("at 3 do something")
