import datetime
import uuid
from typing import List, Optional

from sqlmodel import Field, Relationship, SQLModel


def _utcnow() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


class ExperimentRun(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: uuid.UUID = Field(unique=True, default_factory=uuid.uuid4)
    command: str
    config_hash: str = Field(index=True)
    run_dir: str
    started_at: datetime.datetime = Field(default_factory=_utcnow)
    finished_at: Optional[datetime.datetime] = Field(default=None)
    exit_code: Optional[int] = Field(default=None)
    results: List["MethodResult"] = Relationship(back_populates="run", sa_relationship_kwargs={"lazy": "selectin"},)


class MethodResult(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: Optional[int] = Field(default=None, foreign_key="experimentrun.id", index=True)
    run: Optional[ExperimentRun] = Relationship(back_populates="results")
    method: str
    fingerprint: str
    snr_db: Optional[float] = Field(default=None)
    label: str = ""
    test_points: int
    median_error_m: float
    p90_error_m: float
    mean_error_m: float
    per_query_ms: float
    artifact_bytes: int
