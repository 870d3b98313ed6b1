"""Experiment ledger on an async SQLite engine.

The engine is created lazily by :func:`configure`; every CLI command opens
it on ``<run root>/<ADLOC_DATABASE_FILE>``.
"""

import datetime
import logging
from pathlib import Path
from typing import Iterable, Optional

from sqlalchemy.ext.asyncio import AsyncEngine, create_async_engine
from sqlmodel import SQLModel, select
from sqlmodel.ext.asyncio.session import AsyncSession as Session

from .models import ExperimentRun, MethodResult

logger = logging.getLogger(__name__)

connect_args = {"check_same_thread": False}

engine: Optional[AsyncEngine] = None


def configure(sqlite_file: Path) -> AsyncEngine:
    global engine
    sqlite_url = f"sqlite+aiosqlite:///{sqlite_file}"
    engine = create_async_engine(sqlite_url, future=True, echo=False, connect_args=connect_args)
    return engine


def _engine() -> AsyncEngine:
    if engine is None:
        raise RuntimeError("ledger engine is not configured; call configure() first")
    return engine


async def engine_start() -> None:
    async with _engine().begin() as conn:
        await conn.run_sync(SQLModel.metadata.create_all)


async def engine_stop() -> None:
    if engine is not None:
        await engine.dispose()


async def add_run(command: str, config_hash: str, run_dir: str) -> ExperimentRun:
    run = ExperimentRun(command=command, config_hash=config_hash, run_dir=run_dir)
    async with Session(_engine(), expire_on_commit=False) as session:
        session.add(run)
        await session.commit()
        await session.refresh(run)
        return run


async def finish_run(run_id: int, exit_code: int) -> Optional[ExperimentRun]:
    async with Session(_engine(), expire_on_commit=False) as session:
        run = await session.get(ExperimentRun, run_id)
        if run is None:
            logger.warning("Ledger has no run with id %s", run_id)
            return None
        run.finished_at = datetime.datetime.now(datetime.timezone.utc)
        run.exit_code = exit_code
        session.add(run)
        await session.commit()
        await session.refresh(run)
        return run


async def add_method_results(run_id: int, summaries: Iterable[dict]) -> list[MethodResult]:
    """Store one row per report summary (see ``EvalReport.summary``)."""
    rows = []
    for s in summaries:
        label = ",".join(f"{k}={s[k]}" for k in ("m", "n", "bandwidth_mhz") if k in s)
        rows.append(MethodResult(
            run_id=run_id,
            method=s["method"],
            fingerprint=s["fingerprint"],
            snr_db=s.get("snr_db"),
            label=label,
            test_points=s["test_points"],
            median_error_m=s["median_error_m"],
            p90_error_m=s["p90_error_m"],
            mean_error_m=s["mean_error_m"],
            per_query_ms=s["per_query_ms"],
            artifact_bytes=s["artifact_bytes"],
        ))
    async with Session(_engine(), expire_on_commit=False) as session:
        session.add_all(rows)
        await session.commit()
        for row in rows:
            await session.refresh(row)
    return rows


async def get_runs(limit: int = 20, command: Optional[str] = None) -> list[ExperimentRun]:
    async with Session(_engine()) as session:
        statement = select(ExperimentRun)
        if command is not None:
            statement = statement.where(ExperimentRun.command == command)
        statement = statement.order_by(ExperimentRun.id.desc()).limit(limit)
        results = await session.exec(statement)
        return list(results.all())


async def get_results(run_id: int) -> list[MethodResult]:
    async with Session(_engine()) as session:
        statement = select(MethodResult).where(MethodResult.run_id == run_id).order_by(MethodResult.id)
        results = await session.exec(statement)
        return list(results.all())
