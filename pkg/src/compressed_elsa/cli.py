from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Any, Optional

try:  # typer>=0.2x vendors its own click
    from typer import _click as click
except ImportError:  # pragma: no cover
    import click
import pandas as pd
import typer
from pydantic import ValidationError

from compressed_elsa.artifacts import (
    checkpoint_scorer,
    load_checkpoint,
    save_compressed_model,
    save_dense_model,
    save_ease_model,
    save_popularity,
    sparse_embeddings,
    write_manifest,
    write_run_config,
    write_table,
)
from compressed_elsa.baselines import ease_fit, popularity_scores, prune_rows, select_lambda
from compressed_elsa.config import configure_logging, get_settings
from compressed_elsa.descriptors import LLMDescriptorProvider, MetadataDescriptorProvider, load_item_metadata
from compressed_elsa.elsa import TrainingHistory, train_dense
from compressed_elsa.errors import ElsaError
from compressed_elsa.evaluation import evaluate_model
from compressed_elsa.experiment import load_experiment_spec, run_experiment
from compressed_elsa.fixture import make_fixture, write_fixture_files
from compressed_elsa.inference import top_n
from compressed_elsa.interactions import (
    GOODBOOKS_URL,
    download_dataset,
    load_interactions,
    read_split,
    split_strong_generalization,
    write_split,
)
from compressed_elsa.linalg import write_matrix
from compressed_elsa.segments import DEFAULT_TAU, group_items, merge_segments, segment_records
from compressed_elsa.sparsifier import train_compressed
from compressed_elsa.storage import artifact_dir, init_db, record_event, record_results, record_run
from compressed_elsa.types import (
    ElsaConfig,
    EventRecord,
    FixtureConfig,
    FoldInConfig,
    LearningRateDecay,
    PruningSchedule,
    RestartKind,
    RestartPolicy,
    RunConfig,
    ScheduleKind,
)
from compressed_elsa.utils import dump_json, generate_run_id, load_yaml_or_json

_logger = logging.getLogger(__name__)

SEED_HELP = "Random seed; defaults to CELSA_RANDOM_SEED."

app = typer.Typer(help="Sparse item embeddings for linear-autoencoder recommenders.")
baseline_app = typer.Typer(help="Closed-form and popularity baselines.")
app.add_typer(baseline_app, name="baseline")


@app.callback()
def _configure(log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING...")) -> None:
    if log_level:
        configure_logging(log_level)


@dataclasses.dataclass
class _Run:
    run_id: str
    config: RunConfig
    out_dir: Path
    record: bool
    files: list[Path] = dataclasses.field(default_factory=list)

    def finish(self) -> None:
        self.files.append(write_run_config(self.out_dir, self.config))
        manifest = write_manifest(self.out_dir, [p for p in self.files if p.name != "timings.json"])
        if self.record:
            engine = init_db()
            record_run(engine, self.run_id, self.config)
            record_event(
                engine,
                EventRecord(run_id=self.run_id, stage=self.config.subcommand, status="ok", message=str(self.out_dir)),
            )
        typer.echo(f"Wrote {len(self.files)} files and {manifest}")


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "value"):
        return value.value
    return value


def _start(subcommand: str, seed: int, out: Optional[Path], record: bool = False, /, **params: Any) -> _Run:
    run_id = generate_run_id(subcommand)
    out_dir = Path(out) if out is not None else artifact_dir(run_id, subcommand)
    config = RunConfig(
        subcommand=subcommand,
        seed=seed,
        output_dir=str(out_dir),
        params={name: _jsonable(value) for name, value in params.items()},
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    return _Run(run_id=run_id, config=config, out_dir=out_dir, record=record)


def _seed(seed: Optional[int]) -> int:
    return seed if seed is not None else get_settings().random_seed


def _parse_ints(text: str, option: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise typer.BadParameter(f"expected comma-separated integers, got '{text}'", param_hint=option) from exc


def _history_table(history: TrainingHistory) -> pd.DataFrame:
    frame = pd.DataFrame({"epoch": range(1, len(history.losses) + 1), "loss": history.losses, "k": history.active_k})
    if history.validation_ndcg:
        frame["validation_ndcg"] = history.validation_ndcg
    return frame


@app.command("split")
def split_cmd(
    data: Path = typer.Option(..., "--data", help="user,item[,rating] interactions file."),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    val_frac: float = typer.Option(0.1, "--val-frac"),
    test_frac: float = typer.Option(0.1, "--test-frac"),
    min_feedback: float = typer.Option(0.0, "--min-feedback"),
    delimiter: str = typer.Option(",", "--delimiter"),
    record: bool = typer.Option(False, "--record", help="Also log the run in the registry database."),
) -> None:
    seed = _seed(seed)
    run = _start(
        "split", seed, out, record,
        data=data, val_frac=val_frac, test_frac=test_frac, min_feedback=min_feedback, delimiter=delimiter,
    )
    X = load_interactions(data, min_feedback=min_feedback, delimiter=delimiter)
    split = split_strong_generalization(X, val_frac, test_frac, seed)
    split = dataclasses.replace(split, source=str(data))
    run.files += write_split(split, run.out_dir)
    run.finish()


@app.command("train")
def train_cmd(
    data: Path = typer.Option(..., "--data", help="Split directory written by 'split'."),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    d: int = typer.Option(256, "--d"),
    epochs: int = typer.Option(20, "--epochs"),
    batch_size: int = typer.Option(256, "--batch-size"),
    learning_rate: float = typer.Option(0.01, "--lr"),
    lr_decay: LearningRateDecay = typer.Option(LearningRateDecay.COSINE, "--lr-decay"),
    validate: bool = typer.Option(True, "--validate/--no-validate"),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    config = ElsaConfig(
        d=d, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, lr_decay=lr_decay, seed=seed
    )
    run = _start("train", seed, out, record, data=data, **config.model_dump(mode="json"), validate=validate)
    split = read_split(data)
    model, history = train_dense(split.train, config, split.validation if validate else None)
    run.files += save_dense_model(run.out_dir / "model.spem", model, history, split.train.item_ids)
    run.files += write_table(_history_table(history), run.out_dir / "history")
    run.finish()


@app.command("compress")
def compress_cmd(
    data: Path = typer.Option(..., "--data", help="Split directory written by 'split'."),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    d: int = typer.Option(256, "--d"),
    k: int = typer.Option(32, "--k"),
    schedule: ScheduleKind = typer.Option(ScheduleKind.EXPONENTIAL, "--schedule"),
    restart: RestartKind = typer.Option(RestartKind.RESTART_FROM_INIT, "--restart"),
    epochs: int = typer.Option(20, "--epochs"),
    prune_events: Optional[int] = typer.Option(None, "--prune-events", help="Pruning events T (default epochs-1)."),
    schedule_spec: Optional[Path] = typer.Option(None, "--schedule-spec", help="JSON/YAML schedule; overrides --d/--k."),
    batch_size: int = typer.Option(256, "--batch-size"),
    learning_rate: float = typer.Option(0.01, "--lr"),
    lr_decay: LearningRateDecay = typer.Option(LearningRateDecay.COSINE, "--lr-decay"),
    validate: bool = typer.Option(True, "--validate/--no-validate"),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    if schedule_spec is not None:
        pruning = PruningSchedule.model_validate(load_yaml_or_json(schedule_spec))
    else:
        T = prune_events if prune_events is not None else epochs - 1
        if schedule is not ScheduleKind.CONSTANT:
            T = max(T, 1)
        pruning = PruningSchedule(kind=schedule, d=d, k=k, T=T)
    config = ElsaConfig(
        d=pruning.d,
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        lr_decay=lr_decay,
        seed=seed,
    )
    run = _start(
        "compress", seed, out, record,
        data=data, schedule=pruning.model_dump(mode="json"), restart=restart, **config.model_dump(mode="json"),
    )
    split = read_split(data)
    compressed = train_compressed(
        split.train, config, pruning, RestartPolicy(kind=restart), split.validation if validate else None
    )
    run.files += save_compressed_model(run.out_dir / "model.spem", compressed, split.train.item_ids)
    run.files.append(dump_json(run.out_dir / "dead_latents.json", compressed.report.model_dump(mode="json")))
    if compressed.history is not None:
        run.files += write_table(_history_table(compressed.history), run.out_dir / "history")
    run.finish()


@baseline_app.command("ease")
def baseline_ease(
    data: Path = typer.Option(..., "--data"),
    out: Optional[Path] = typer.Option(None, "--out"),
    lam: float = typer.Option(500.0, "--lambda"),
    select: bool = typer.Option(False, "--select-lambda", help="Pick lambda by validation nDCG@100."),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    run = _start("baseline", seed, out, record, method="ease", data=data, lam=lam, select_lambda=select)
    split = read_split(data)
    if select:
        lam, search = select_lambda(split.train, split.validation, FoldInConfig(seed=seed))
        run.files.append(dump_json(run.out_dir / "lambda_search.json", {str(k): v for k, v in search.items()}))
    weights = ease_fit(split.train, lam)
    run.files += save_ease_model(run.out_dir / "model.spem", weights, lam, split.train.item_ids)
    run.finish()


@baseline_app.command("pruned-ease")
def baseline_pruned_ease(
    data: Path = typer.Option(..., "--data"),
    out: Optional[Path] = typer.Option(None, "--out"),
    lam: float = typer.Option(500.0, "--lambda"),
    k: int = typer.Option(32, "--k"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    run = _start("baseline", seed, out, record, method="pruned_ease", data=data, lam=lam, k=k)
    split = read_split(data)
    pruned = prune_rows(ease_fit(split.train, lam), k)
    run.files += save_ease_model(run.out_dir / "model.spem", pruned, lam, split.train.item_ids, k=k)
    run.finish()


@baseline_app.command("popularity")
def baseline_popularity(
    data: Path = typer.Option(..., "--data"),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    run = _start("baseline", seed, out, record, method="popularity", data=data)
    split = read_split(data)
    run.files += save_popularity(run.out_dir / "model.spem", popularity_scores(split.train), split.train.item_ids)
    run.finish()


@app.command("eval")
def eval_cmd(
    model: Path = typer.Option(..., "--model"),
    data: Path = typer.Option(..., "--data", help="Split directory written by 'split'."),
    partition: str = typer.Option("test", "--partition", help="test or validation"),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Fold-in seed; defaults to CELSA_RANDOM_SEED."),
    holdout_frac: float = typer.Option(0.2, "--holdout-frac"),
    cutoffs: str = typer.Option("20,50,100", "--cutoffs"),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    if partition not in ("test", "validation"):
        raise typer.BadParameter("partition must be 'test' or 'validation'", param_hint="--partition")
    protocol = FoldInConfig(holdout_frac=holdout_frac, seed=seed, cutoffs=_parse_ints(cutoffs, "--cutoffs"))
    run = _start("eval", seed, out, record, model=model, data=data, partition=partition, **protocol.model_dump())
    checkpoint = load_checkpoint(model)
    users = getattr(read_split(data), partition)
    report = evaluate_model(checkpoint_scorer(checkpoint), users, protocol)
    report.embedding_bytes = checkpoint.sidecar.get("embedding_bytes")
    run.files.append(dump_json(run.out_dir / "metrics.json", report.model_dump(mode="json")))
    typer.echo(json.dumps({"kind": checkpoint.kind, "ndcg": report.ndcg, "recall": report.recall, "users": report.n_users}))
    run.finish()


@app.command("segment")
def segment_cmd(
    model: Path = typer.Option(..., "--model"),
    metadata: Path = typer.Option(..., "--metadata", help="item_id,title,tags file."),
    tau: float = typer.Option(DEFAULT_TAU, "--tau"),
    out: Optional[Path] = typer.Option(None, "--out"),
    llm: bool = typer.Option(False, "--llm/--no-llm", help="Describe segments with an OpenAI-compatible API."),
    delimiter: str = typer.Option(",", "--delimiter"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    run = _start("segment", seed, out, record, model=model, metadata=metadata, tau=tau, llm=llm)
    checkpoint = load_checkpoint(model)
    embeddings = sparse_embeddings(checkpoint)
    item_ids = checkpoint.item_ids
    vocab = {raw: index for index, raw in enumerate(item_ids)} if item_ids is not None else None
    items = load_item_metadata(metadata, vocab, delimiter=delimiter)
    provider = MetadataDescriptorProvider(items)
    chosen = LLMDescriptorProvider(provider) if llm else provider
    segment_set = merge_segments(group_items(embeddings), chosen, tau, d=embeddings.shape[1], metadata=items)
    records = [r.model_dump(mode="json") for r in segment_records(segment_set, item_ids)]
    run.files.append(dump_json(run.out_dir / "segments.json", records))
    run.files.append(write_matrix(run.out_dir / "segment_matrix.spem", segment_set.B_bar_s))
    run.files.append(dump_json(run.out_dir / "unsegmented_items.json", segment_set.dead_items.tolist()))
    run.finish()


@app.command("recommend")
def recommend_cmd(
    model: Path = typer.Option(..., "--model"),
    items: str = typer.Option(..., "--items", help="Comma-separated dense item indices."),
    n: int = typer.Option(100, "--n", min=1),
    exclude_seen: bool = typer.Option(True, "--exclude-seen/--include-seen"),
) -> None:
    seen = _parse_ints(items, "--items")
    checkpoint = load_checkpoint(model)
    scores = checkpoint_scorer(checkpoint)(seen)
    result = top_n(scores, seen if exclude_seen else [], n)
    typer.echo(json.dumps(result.to_records(checkpoint.item_ids)))


@app.command("experiment")
def experiment_cmd(
    spec: Path = typer.Option(..., "--spec", help="Experiment spec (JSON or YAML)."),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Run a single seed instead of the listed seeds."),
    workers: int = typer.Option(1, "--workers", help=">1 runs cells on a local dask cluster."),
    record: bool = typer.Option(False, "--record"),
) -> None:
    experiment = load_experiment_spec(spec)
    if seed is not None:
        experiment = experiment.model_copy(update={"seeds": [seed]})
    run = _start(
        "experiment", experiment.seeds[0], out, record, spec=spec, name=experiment.name, seeds=experiment.seeds
    )
    report = run_experiment(experiment, run.out_dir, workers=workers, base_dir=spec.parent)
    run.files += report.files
    if record:
        rows = json.loads(report.results.to_json(orient="records"))
        record_results(init_db(), run.run_id, rows, f"ndcg@{experiment.report_cutoff}")
    run.finish()


@app.command("fixture")
def fixture_cmd(
    out: Optional[Path] = typer.Option(None, "--out"),
    users: int = typer.Option(2000, "--users"),
    items: int = typer.Option(500, "--items"),
    clusters: int = typer.Option(10, "--clusters"),
    p_in: float = typer.Option(0.2, "--p-in"),
    p_out: float = typer.Option(0.01, "--p-out"),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    record: bool = typer.Option(False, "--record"),
) -> None:
    seed = _seed(seed)
    config = FixtureConfig(n_users=users, n_items=items, n_clusters=clusters, p_in=p_in, p_out=p_out, seed=seed)
    run = _start("fixture", seed, out, record, **config.model_dump(mode="json"))
    fixture = make_fixture(config)
    run.files += write_fixture_files(fixture, run.out_dir)
    run.files += write_split(fixture.split, run.out_dir / "split")
    run.finish()


@app.command("fetch")
def fetch_cmd(
    out: Path = typer.Option(Path("data/goodbooks/ratings.csv"), "--out"),
    url: str = typer.Option(GOODBOOKS_URL, "--url"),
) -> None:
    path = download_dataset(url, out)
    typer.echo(f"Wrote {path}")


def main(argv: list[str] | None = None) -> int:
    """Run the CLI; 0 on success, 1 on usage errors, 2 on runtime errors."""
    configure_logging()
    try:
        rv = app(args=argv, prog_name="celsa", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except ValidationError as exc:
        _logger.error("invalid configuration: %s", exc)
        return 1
    except (ElsaError, ValueError, OSError) as exc:
        _logger.error("%s: %s", type(exc).__name__, exc)
        return 2
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
