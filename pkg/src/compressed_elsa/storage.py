from __future__ import annotations

from pathlib import Path
from typing import Any

from sqlalchemy import JSON, Column, Float, Integer, MetaData, String, Table, Text, create_engine, select
from sqlalchemy.engine import Engine

from compressed_elsa.config import get_settings
from compressed_elsa.types import EventRecord, RunConfig
from compressed_elsa.utils import stable_hash


metadata = MetaData()

runs_table = Table(
    "runs",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("run_id", String(64), nullable=False, index=True),
    Column("subcommand", String(32), nullable=False),
    Column("config_hash", String(128), nullable=False),
    Column("output_dir", Text, nullable=True),
    Column("payload", JSON, nullable=False),
)

events_table = Table(
    "events",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("run_id", String(64), nullable=False, index=True),
    Column("stage", String(64), nullable=False),
    Column("status", String(32), nullable=False),
    Column("message", Text, nullable=False),
    Column("timestamp", String(64), nullable=False),
)

results_table = Table(
    "results",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("run_id", String(64), nullable=False, index=True),
    Column("method", String(32), nullable=False),
    Column("embedding_bytes", Integer, nullable=False),
    Column("ndcg", Float, nullable=False),
    Column("payload", JSON, nullable=False),
)


def create_engine_from_settings() -> Engine:
    settings = get_settings()
    return create_engine(settings.database_url, future=True)


def init_db(engine: Engine | None = None) -> Engine:
    engine = engine or create_engine_from_settings()
    metadata.create_all(engine)
    return engine


def save_record(engine: Engine, table: Table, payload: dict[str, Any]) -> None:
    with engine.begin() as conn:
        conn.execute(table.insert().values(**payload))


def record_run(engine: Engine, run_id: str, config: RunConfig) -> None:
    payload = config.model_dump(mode="json")
    save_record(
        engine,
        runs_table,
        {
            "run_id": run_id,
            "subcommand": config.subcommand,
            "config_hash": stable_hash(payload),
            "output_dir": config.output_dir,
            "payload": payload,
        },
    )


def record_event(engine: Engine, event: EventRecord) -> None:
    save_record(engine, events_table, event.model_dump(mode="json"))


def record_results(engine: Engine, run_id: str, rows: list[dict[str, Any]], metric: str) -> None:
    with engine.begin() as conn:
        for row in rows:
            conn.execute(
                results_table.insert().values(
                    run_id=run_id,
                    method=str(row["method"]),
                    embedding_bytes=int(row["embedding_bytes"]),
                    ndcg=float(row[metric]),
                    payload=row,
                )
            )


def fetch_results(engine: Engine, run_id: str) -> list[dict[str, Any]]:
    with engine.connect() as conn:
        rows = conn.execute(select(results_table).where(results_table.c.run_id == run_id).order_by(results_table.c.id))
        return [dict(row._mapping) for row in rows]


def artifact_dir(run_id: str, stage: str) -> Path:
    """Default output directory ``<artifact_root>/<run_id>/<stage>``."""
    path = get_settings().artifact_root / run_id / stage
    path.mkdir(parents=True, exist_ok=True)
    return path
