"""Commit latency, throughput and per-phase timings of share transactions."""

import csv
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from absl import logging

from threatmesh.attck.layers import Layer, load_fixture
from threatmesh.config import ScenarioConfig, with_orgs
from threatmesh.netsim.network import MS_PER_TICK
from threatmesh.simulation import Simulation

CSV_COLUMNS = ("tx_id", "submit_tick", "commit_tick", "latency_ms", "valid_flag")
# written for transactions that never reached the submitting client's event peer
UNCOMMITTED = "uncommitted"


class BenchRow(NamedTuple):
    tx_id: str
    submit_tick: int
    commit_tick: Optional[int]
    latency_ms: Optional[int]
    valid_flag: str


class PhaseBreakdown(NamedTuple):
    """Mean ticks per phase: proposal to endorsed, submitted to cut, cut to commit event."""

    endorse: float
    order: float
    commit: float


class BenchReport(NamedTuple):
    rows: tuple[BenchRow, ...]
    blocks: int
    duration_ticks: int
    throughput: float
    phases: PhaseBreakdown

    @property
    def committed(self) -> int:
        return sum(1 for row in self.rows if row.commit_tick is not None)

    @property
    def valid(self) -> int:
        return sum(1 for row in self.rows if row.valid_flag == "valid")

    def latency_percentiles(self, q: Sequence[float] = (50, 95, 99)) -> dict[float, float]:
        latencies = np.array([row.latency_ms for row in self.rows if row.latency_ms is not None], dtype=np.float64)
        if latencies.size == 0:
            return {p: float("nan") for p in q}
        return dict(zip(q, np.percentile(latencies, q).tolist()))

    def summary(self) -> str:
        p = self.latency_percentiles()
        return (f"txs={len(self.rows)} valid={self.valid} blocks={self.blocks} "
                f"duration={self.duration_ticks} ticks throughput={self.throughput:.1f} tx/1000 ticks "
                f"latency_ms p50={p[50]:.1f} p95={p[95]:.1f} p99={p[99]:.1f} "
                f"phases(ticks) endorse={self.phases.endorse:.2f} order={self.phases.order:.2f} "
                f"commit={self.phases.commit:.2f}")


def bench_layer(base: Layer, index: int) -> Layer:
    """A distinct variant of ``base`` per transaction, so every share has its own cid."""
    return base.replace(name=f"{base.name} #{index}")


def run_bench(sim, txs: int, base: Optional[Layer] = None) -> BenchReport:
    """
    Prepares ``txs`` shares round-robin over the simulation's clients, then submits all of them at
    one tick and runs until every commit event arrived or the commit timeout passed.

    Each share goes to one client of another organization of the first private collection, when
    there is one.
    """
    if txs < 1:
        raise ValueError(f"txs must be positive, got {txs}")
    base = base or load_fixture("wicked_panda_G0096")
    clients = list(sim.clients.values())
    collection = sim.channel.collections[0].member_orgs if sim.channel.collections else frozenset()
    recipients = {}
    for client in clients:
        others = [c for c in clients if c.identity.organization != client.identity.organization
                  and c.identity.organization in collection]
        recipients[client.identity.name] = [others[0].did] if others else []

    prepared = []
    for i in range(txs):
        client = clients[i % len(clients)]
        started = sim.now
        endorsed, _ = client.prepare_share(bench_layer(base, i), recipients[client.identity.name])
        prepared.append((client, endorsed, started))
    logging.info("bench: %d proposals endorsed by tick %d", txs, sim.now)

    channel = sim.channel.name
    height = len(sim.orderer.chain(channel))
    submitted = [(client, client.gateway.submit_async(e.proposal, e.endorsements), e, started)
                 for client, e, started in prepared]
    submit_tick = sim.now
    timeout = sim.config.ledger.COMMIT_TIMEOUT_TICKS + txs * (sim.config.ledger.BLOCK_INTERVAL_TICKS + 1)
    sim.network.run_until(lambda: all(tx_id in c.gateway.statuses for c, tx_id, _, _ in submitted), timeout)
    sim.settle()

    rows, endorse, order, commit = [], [], [], []
    for client, tx_id, endorsed, started in submitted:
        endorse.append(endorsed.endorsed_at - started)
        status = client.gateway.statuses.get(tx_id)
        if status is None:
            rows.append(BenchRow(tx_id, submit_tick, None, None, UNCOMMITTED))
            continue
        order.append(status.cut_tick - submit_tick)
        commit.append(status.commit_tick - status.cut_tick)
        latency = (status.commit_tick - submit_tick) * MS_PER_TICK
        rows.append(BenchRow(tx_id, submit_tick, status.commit_tick, latency, status.flag.value))

    commit_ticks = [row.commit_tick for row in rows if row.commit_tick is not None]
    duration = max(1, max(commit_ticks) - submit_tick) if commit_ticks else 0
    valid = sum(1 for row in rows if row.valid_flag == "valid")
    report = BenchReport(
        rows=tuple(rows),
        blocks=len(sim.orderer.chain(channel)) - height,
        duration_ticks=duration,
        throughput=valid * 1000 / duration if duration else 0.0,
        phases=PhaseBreakdown(*(float(np.mean(v)) if v else 0.0 for v in (endorse, order, commit))),
    )
    logging.info("bench: %s", report.summary())
    return report


def bench(config: ScenarioConfig, txs: int, orgs: Optional[int] = None) -> BenchReport:
    """Runs :func:`run_bench` on a freshly built simulation of ``config``, optionally over ``orgs`` organizations."""
    if orgs is not None:
        config = with_orgs(config, orgs)
    return run_bench(Simulation(config), txs)


def write_csv(report: BenchReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(["" if value is None else value for value in row])
