from __future__ import annotations

from datetime import datetime, timezone
from enum import Enum
from typing import Any

from pydantic import BaseModel, Field, field_validator, model_validator


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    STEPWISE = "stepwise"


class RestartKind(str, Enum):
    RESTART_FROM_INIT = "init"
    CONTINUE = "continue"


class LearningRateDecay(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class Method(str, Enum):
    DENSE = "dense"
    COMPRESSED = "compressed"
    LOW_DIM = "low_dim"
    EASE = "ease"
    PRUNED_EASE = "pruned_ease"
    POPULARITY = "popularity"


class ElsaConfig(BaseModel):
    d: int = Field(default=256, ge=1)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=256, ge=1)
    learning_rate: float = Field(default=0.01, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)
    lr_decay: LearningRateDecay = LearningRateDecay.COSINE
    seed: int = 7


class PruningSchedule(BaseModel):
    kind: ScheduleKind = ScheduleKind.EXPONENTIAL
    d: int = Field(ge=1)
    k: int = Field(ge=1)
    T: int = Field(default=1, ge=0)
    step_epoch: int | None = None

    @model_validator(mode="after")
    def validate_levels(self) -> "PruningSchedule":
        if self.k > self.d:
            raise ValueError(f"k={self.k} must not exceed d={self.d}")
        if self.kind is not ScheduleKind.CONSTANT and self.T < 1:
            raise ValueError(f"{self.kind.value} schedule needs T >= 1")
        if self.kind is ScheduleKind.STEPWISE:
            step = self.step_epoch if self.step_epoch is not None else min(10, self.T)
            if not 1 <= step <= self.T:
                raise ValueError(f"step_epoch={step} must lie in [1, T={self.T}]")
            self.step_epoch = step
        return self


class RestartPolicy(BaseModel):
    kind: RestartKind = RestartKind.RESTART_FROM_INIT


class DeadLatentReport(BaseModel):
    dead_rows: int
    dead_columns: int
    dead_column_indices: list[int] = Field(default_factory=list)


class FoldInConfig(BaseModel):
    holdout_frac: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = 7
    cutoffs: list[int] = Field(default_factory=lambda: [20, 50, 100])

    @field_validator("cutoffs")
    @classmethod
    def ensure_positive_cutoffs(cls, value: list[int]) -> list[int]:
        if not value or any(c < 1 for c in value):
            raise ValueError("cutoffs must be a non-empty list of positive integers")
        return sorted(set(value))


class MetricReport(BaseModel):
    cutoffs: list[int]
    ndcg: dict[int, float]
    recall: dict[int, float]
    ndcg_stderr: dict[int, float]
    recall_stderr: dict[int, float]
    n_users: int
    skipped_users: int = 0
    per_user_ndcg: dict[int, list[float]] = Field(default_factory=dict)
    per_user_recall: dict[int, list[float]] = Field(default_factory=dict)
    embedding_bytes: int | None = None
    timings: dict[str, float] = Field(default_factory=dict)


class FixtureConfig(BaseModel):
    n_users: int = Field(default=2000, ge=3)
    n_items: int = Field(default=500, ge=1)
    n_clusters: int = Field(default=10, ge=1)
    p_in: float = Field(default=0.2, ge=0.0, le=1.0)
    p_out: float = Field(default=0.01, ge=0.0, le=1.0)
    seed: int = 7
    val_frac: float = Field(default=0.1, ge=0.0, lt=1.0)
    test_frac: float = Field(default=0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_probabilities(self) -> "FixtureConfig":
        if self.p_in <= self.p_out:
            raise ValueError("p_in must be greater than p_out")
        if self.n_clusters > self.n_items:
            raise ValueError("n_clusters must not exceed n_items")
        if self.val_frac + self.test_frac >= 1.0:
            raise ValueError("val_frac + test_frac must be < 1")
        return self


class SplitManifest(BaseModel):
    n_items: int
    train_users: int
    validation_users: int
    test_users: int
    seed: int
    val_frac: float
    test_frac: float
    source: str = ""


class DataSpec(BaseModel):
    fixture: FixtureConfig | None = None
    path: str | None = None
    delimiter: str = ","
    min_feedback: float = Field(default=0.0, ge=0.0)
    val_frac: float = Field(default=0.1, ge=0.0, lt=1.0)
    test_frac: float = Field(default=0.1, ge=0.0, lt=1.0)
    split_seed: int = 7

    @model_validator(mode="after")
    def validate_source(self) -> "DataSpec":
        if (self.fixture is None) == (self.path is None):
            raise ValueError("data needs exactly one of 'fixture' or 'path'")
        return self


class ModelSpec(BaseModel):
    method: Method
    d: int = Field(default=128, ge=1)
    widths: list[int] = Field(default_factory=list)
    budgets: list[int] = Field(default_factory=list)
    schedules: list[ScheduleKind] = Field(default_factory=lambda: [ScheduleKind.EXPONENTIAL])
    restarts: list[RestartKind] = Field(default_factory=lambda: [RestartKind.RESTART_FROM_INIT])
    epochs: int = Field(default=20, ge=1)
    prune_events: int | None = Field(default=None, ge=0)
    batch_size: int = Field(default=256, ge=1)
    learning_rate: float = Field(default=0.01, gt=0.0)
    lr_decay: LearningRateDecay = LearningRateDecay.COSINE
    lambdas: list[float] = Field(default_factory=lambda: [500.0])

    @model_validator(mode="after")
    def validate_budgets(self) -> "ModelSpec":
        budgeted = {Method.COMPRESSED, Method.LOW_DIM, Method.PRUNED_EASE}
        if self.method in budgeted and not self.budgets:
            raise ValueError(f"budgets: method '{self.method.value}' needs at least one byte budget")
        unit = 4 if self.method is Method.LOW_DIM else 8
        for budget in self.budgets:
            if budget < unit or budget % unit:
                raise ValueError(f"budgets: {budget} B is not a positive multiple of {unit} B")
        if self.method is Method.COMPRESSED:
            for width in [self.d, *self.widths]:
                if any(budget // 8 > width for budget in self.budgets):
                    raise ValueError(f"budgets: a budget asks for more than d={width} nonzeros")
        gradual = any(s is not ScheduleKind.CONSTANT for s in self.schedules)
        if self.method is Method.COMPRESSED and gradual and self.epochs < 2:
            raise ValueError("gradual schedules need at least 2 epochs")
        if self.prune_events is not None and self.prune_events > self.epochs:
            raise ValueError("prune_events must be at most epochs")
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError("lambdas must be positive")
        return self


class ExperimentSpec(BaseModel):
    name: str
    data: DataSpec
    models: list[ModelSpec]
    seeds: list[int] = Field(default_factory=lambda: [0])
    protocol: FoldInConfig = Field(default_factory=FoldInConfig)
    report_cutoff: int = 100

    @model_validator(mode="after")
    def validate_grid(self) -> "ExperimentSpec":
        if not self.models:
            raise ValueError("models must not be empty")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.report_cutoff not in self.protocol.cutoffs:
            raise ValueError(f"report_cutoff {self.report_cutoff} missing from protocol.cutoffs")
        return self


class SegmentRecord(BaseModel):
    segment_id: int
    descriptor: str
    member_items: list[int]
    latent_dims: list[tuple[int, int]]
    member_ids: list[str] = Field(default_factory=list)


class RunConfig(BaseModel):
    subcommand: str
    seed: int
    output_dir: str | None = None
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("subcommand")
    @classmethod
    def ensure_known_subcommand(cls, value: str) -> str:
        known = {"split", "train", "compress", "baseline", "eval", "segment", "recommend", "experiment", "fixture", "fetch"}
        if value not in known:
            raise ValueError(f"unknown subcommand '{value}'")
        return value


class EventRecord(BaseModel):
    run_id: str
    stage: str
    status: str
    message: str
    timestamp: str = Field(default_factory=lambda: datetime.now(tz=timezone.utc).isoformat())
