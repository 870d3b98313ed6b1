import asyncio

import pytest

from database_app import database


@pytest.fixture
def ledger(tmp_path):
    database.configure(tmp_path / "ledger.db")
    return database


def run(scenario):
    """Run *scenario* on a fresh event loop between engine start and stop."""

    async def wrapped():
        await database.engine_start()
        try:
            return await scenario()
        finally:
            await database.engine_stop()

    return asyncio.run(wrapped())


SUMMARIES = [
    {"method": "wknn", "fingerprint": "adcpm", "test_points": 200, "median_error_m": 1.2, "p90_error_m": 3.4,
     "mean_error_m": 1.8, "per_query_ms": 0.4, "artifact_bytes": 1000, "m": 4, "n": 8},
    {"method": "cnn3d", "fingerprint": "sfcpm", "snr_db": 12.0, "test_points": 200, "median_error_m": 2.0,
     "p90_error_m": 5.0, "mean_error_m": 2.5, "per_query_ms": 3.0, "artifact_bytes": 50000},
]


def test_run_lifecycle(ledger):
    async def scenario():
        row = await ledger.add_run("compare", "ab" * 32, "/runs/compare-abababababab")
        assert row.id is not None and row.exit_code is None
        await ledger.add_method_results(row.id, SUMMARIES)
        finished = await ledger.finish_run(row.id, 0)
        return row.id, finished, await ledger.get_results(row.id)

    run_id, finished, results = run(scenario)
    assert finished.exit_code == 0 and finished.finished_at is not None
    assert [r.method for r in results] == ["wknn", "cnn3d"]
    assert results[0].label == "m=4,n=8" and results[0].snr_db is None
    assert results[1].snr_db == 12.0 and results[1].label == ""
    assert all(r.run_id == run_id for r in results)


def test_runs_newest_first_and_filtered(ledger):
    async def scenario():
        for command in ("train", "eval", "train"):
            await ledger.add_run(command, "00" * 32, f"/runs/{command}")
        return await ledger.get_runs(), await ledger.get_runs(limit=1, command="train")

    everything, trains = run(scenario)
    assert [r.command for r in everything] == ["train", "eval", "train"]
    assert everything[0].id > everything[-1].id
    assert len(trains) == 1 and trains[0].id == everything[0].id


def test_finish_unknown_run(ledger):
    assert run(lambda: ledger.finish_run(999, 1)) is None
