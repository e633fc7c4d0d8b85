from compressed_elsa.types import (
    DeadLatentReport,
    ElsaConfig,
    ExperimentSpec,
    FixtureConfig,
    FoldInConfig,
    LearningRateDecay,
    Method,
    MetricReport,
    PruningSchedule,
    RestartKind,
    RestartPolicy,
    RunConfig,
    ScheduleKind,
    SegmentRecord,
)

__all__ = [
    "DeadLatentReport",
    "ElsaConfig",
    "ExperimentSpec",
    "FixtureConfig",
    "FoldInConfig",
    "LearningRateDecay",
    "Method",
    "MetricReport",
    "PruningSchedule",
    "RestartKind",
    "RestartPolicy",
    "RunConfig",
    "ScheduleKind",
    "SegmentRecord",
]

__version__ = "0.1.0"
