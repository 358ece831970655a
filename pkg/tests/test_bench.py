import csv

import pytest

from threatmesh.attck.layers import load_fixture
from threatmesh.bench import CSV_COLUMNS, bench, bench_layer, run_bench, write_csv
from threatmesh.config import default_config


def _batch(size: int):
    config = default_config(seed=1)
    return config._replace(ledger=config.ledger._replace(BATCH_SIZE=size))


@pytest.fixture(scope="module")
def report_100():
    return bench(default_config(seed=1), 100)


def test_hundred_transactions_fill_ten_blocks(report_100):
    assert len(report_100.rows) == 100
    assert report_100.committed == 100
    assert report_100.valid == 100
    assert report_100.blocks == 10
    assert report_100.throughput > 0


def test_csv_layout(tmp_path, report_100):
    path = tmp_path / "bench.csv"
    write_csv(report_100, path)
    with open(path) as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 100
    for row in rows:
        assert int(row["commit_tick"]) > int(row["submit_tick"])
        assert int(row["latency_ms"]) == int(row["commit_tick"]) - int(row["submit_tick"])
        assert row["valid_flag"] == "valid"


def test_same_seed_same_csv(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        write_csv(bench(default_config(seed=5), 12), path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    write_csv(bench(default_config(seed=6), 12), tmp_path / "c.csv")
    assert paths[0].read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_larger_batches_raise_throughput():
    single = bench(_batch(1), 30)
    batched = bench(_batch(10), 30)
    assert single.blocks == 30
    assert batched.blocks == 3
    assert batched.throughput > single.throughput


def test_bench_over_more_orgs():
    report = bench(default_config(), 8, orgs=5)
    assert report.valid == 8
    assert report.phases.endorse > 0


def test_summary_mentions_the_percentiles(report_100):
    summary = report_100.summary()
    assert "txs=100" in summary and "blocks=10" in summary
    percentiles = report_100.latency_percentiles()
    assert percentiles[50] <= percentiles[95] <= percentiles[99]


def test_bench_layers_differ():
    base = load_fixture("fox_kitten_G0117")
    assert bench_layer(base, 0) != bench_layer(base, 1)
    assert bench_layer(base, 0).techniques == base.techniques


def test_run_bench_needs_transactions(sim):
    with pytest.raises(ValueError):
        run_bench(sim, 0)
