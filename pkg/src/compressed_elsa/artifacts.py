"""Model checkpoints, result tables and output manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from compressed_elsa.baselines import EaseWeights, ease_scorer
from compressed_elsa.elsa import ElsaModel, TrainingHistory, dense_scorer
from compressed_elsa.errors import DataFormatError
from compressed_elsa.evaluation import Scorer
from compressed_elsa.inference import build_engine, embedding_bytes
from compressed_elsa.linalg import Layout, SparseMatrix, read_matrix, write_matrix
from compressed_elsa.sparsifier import CompressedModel
from compressed_elsa.types import ElsaConfig, RunConfig
from compressed_elsa.utils import dump_json, file_digest

_logger = logging.getLogger(__name__)

MODEL_KINDS = ("dense", "compressed", "ease", "pruned_ease", "popularity")


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    matrix: SparseMatrix | np.ndarray
    sidecar: dict[str, Any]

    @property
    def item_ids(self) -> list[str] | None:
        return self.sidecar.get("item_ids")


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def _item_ids(item_ids: Sequence[Any] | None) -> list[str] | None:
    return [str(i) for i in item_ids] if item_ids is not None else None


def save_checkpoint(
    path: Path, kind: str, matrix: SparseMatrix | np.ndarray, sidecar: dict[str, Any]
) -> list[Path]:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind '{kind}'")
    path = Path(path)
    written = [write_matrix(path, matrix)]
    written.append(dump_json(sidecar_path(path), {"kind": kind, **sidecar}))
    _logger.info("saved %s checkpoint to %s", kind, path)
    return written


def save_dense_model(
    path: Path, model: ElsaModel, history: TrainingHistory | None = None, item_ids: Sequence[Any] | None = None
) -> list[Path]:
    history = history or TrainingHistory()
    sidecar = {
        "config": model.config.model_dump(mode="json"),
        "epoch": len(history.losses),
        "losses": history.to_dict()["losses"],
        "validation_ndcg": history.to_dict()["validation_ndcg"],
        "seed": model.config.seed,
        "embedding_bytes": embedding_bytes(Layout.DENSE, model.d),
        "item_ids": _item_ids(item_ids),
    }
    return save_checkpoint(path, "dense", model.A, sidecar)


def save_compressed_model(
    path: Path, compressed: CompressedModel, item_ids: Sequence[Any] | None = None
) -> list[Path]:
    history = compressed.history or TrainingHistory()
    sidecar = {
        "config": compressed.model.config.model_dump(mode="json"),
        "schedule": compressed.schedule.model_dump(mode="json"),
        "restart": compressed.policy.kind.value,
        "epoch": len(history.losses),
        "losses": history.losses,
        "active_k": history.active_k,
        "validation_ndcg": history.validation_ndcg,
        "seed": compressed.model.config.seed,
        "dead_latents": compressed.report.model_dump(mode="json"),
        "embedding_bytes": embedding_bytes(Layout.CSR, compressed.k),
        "item_ids": _item_ids(item_ids),
    }
    return save_checkpoint(path, "compressed", compressed.A_bar_s, sidecar)


def save_ease_model(
    path: Path, weights: EaseWeights | SparseMatrix, lam: float, item_ids: Sequence[Any] | None = None, k: int | None = None
) -> list[Path]:
    if isinstance(weights, EaseWeights):
        kind, matrix = "ease", weights.B
        per_item = embedding_bytes(Layout.DENSE, weights.n_items)
    else:
        kind, matrix = "pruned_ease", weights
        per_item = embedding_bytes(Layout.CSR, k or int(weights.row_nnz().max(initial=0)))
    sidecar = {"lambda": lam, "k": k, "embedding_bytes": per_item, "item_ids": _item_ids(item_ids)}
    return save_checkpoint(path, kind, matrix, sidecar)


def save_popularity(path: Path, counts: np.ndarray, item_ids: Sequence[Any] | None = None) -> list[Path]:
    matrix = np.asarray(counts, dtype=np.float32)[None, :]
    return save_checkpoint(path, "popularity", matrix, {"embedding_bytes": 4, "item_ids": _item_ids(item_ids)})


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise DataFormatError(f"{path}: missing sidecar {side.name}")
    sidecar = json.loads(side.read_text(encoding="utf-8"))
    kind = sidecar.get("kind")
    if kind not in MODEL_KINDS:
        raise DataFormatError(f"{side}: unknown model kind {kind!r}")
    return Checkpoint(kind=kind, matrix=read_matrix(path), sidecar=sidecar)


def load_dense_model(path: Path) -> ElsaModel:
    checkpoint = load_checkpoint(path)
    if checkpoint.kind != "dense":
        raise DataFormatError(f"{path}: expected a dense checkpoint, found '{checkpoint.kind}'")
    return _dense_model(checkpoint)


def _dense_model(checkpoint: Checkpoint) -> ElsaModel:
    return ElsaModel(A=np.asarray(checkpoint.matrix), config=ElsaConfig.model_validate(checkpoint.sidecar["config"]))


def sparse_embeddings(checkpoint: Checkpoint) -> SparseMatrix:
    """Normalised item embeddings of an ELSA checkpoint, as CSR."""
    if checkpoint.kind == "dense":
        return SparseMatrix.from_dense(_dense_model(checkpoint).normalized(), Layout.CSR)
    if checkpoint.kind == "compressed":
        matrix = checkpoint.matrix
        if not isinstance(matrix, SparseMatrix):
            raise DataFormatError("compressed checkpoints must hold a sparse matrix")
        return matrix.to_layout(Layout.CSR)
    raise DataFormatError(f"'{checkpoint.kind}' checkpoints have no item embeddings")


def checkpoint_scorer(checkpoint: Checkpoint) -> Scorer:
    if checkpoint.kind == "dense":
        return dense_scorer(_dense_model(checkpoint).normalized())
    if checkpoint.kind == "compressed":
        return build_engine(sparse_embeddings(checkpoint)).scorer()
    if checkpoint.kind in ("ease", "pruned_ease"):
        matrix = checkpoint.matrix
        return ease_scorer(matrix if isinstance(matrix, SparseMatrix) else np.asarray(matrix, dtype=np.float64))
    counts = np.asarray(checkpoint.matrix, dtype=np.float64).ravel()
    return lambda items: counts.copy()


def write_table(df: pd.DataFrame, stem: Path) -> list[Path]:
    """The same table as ``<stem>.csv`` and ``<stem>.json`` (records)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    json_path = stem.with_suffix(".json")
    df.to_csv(csv_path, index=False)
    records = json.loads(df.to_json(orient="records", double_precision=15))
    dump_json(json_path, records)
    return [csv_path, json_path]


def write_run_config(out_dir: Path, config: RunConfig) -> Path:
    return dump_json(Path(out_dir) / "config.json", config.model_dump(mode="json"))


def write_manifest(out_dir: Path, files: Sequence[Path]) -> Path:
    """sha256 and size of every output file, keyed by path relative to ``out_dir``."""
    out_dir = Path(out_dir)
    entries = {}
    for path in sorted({Path(p) for p in files}):
        try:
            name = str(path.relative_to(out_dir))
        except ValueError:
            name = str(path)
        entries[name] = {"sha256": file_digest(path), "bytes": path.stat().st_size}
    return dump_json(out_dir / "manifest.json", {"files": entries})
