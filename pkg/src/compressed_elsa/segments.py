"""Interpretable item segments derived from sparse item embeddings.

Items are grouped by their dominant signed latent factor. Groups whose
descriptor embeddings are more similar than ``tau`` are merged, most similar
pair first, and every final segment is placed in the latent space as a
unit-norm row of +-1/sqrt(|L_c|) entries on its factors.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from compressed_elsa.descriptors import DescriptorProvider, ItemMetadata, unit
from compressed_elsa.errors import DeadLatentError, SegmentationError, ShapeMismatchError
from compressed_elsa.inference import SparseInferenceEngine, VectorIndex, user_embedding
from compressed_elsa.linalg import Layout, SparseMatrix
from compressed_elsa.types import SegmentRecord

_logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.8


class SignedFactor(NamedTuple):
    dim: int
    sign: int

    def label(self) -> str:
        return f"{self.dim}{'+' if self.sign > 0 else '-'}"


@dataclass(frozen=True)
class ItemGroup:
    group_id: int
    members: tuple[int, ...]
    support: Counter[SignedFactor]
    descriptor: str = ""
    vector: np.ndarray | None = None

    @property
    def factors(self) -> list[SignedFactor]:
        return sorted(self.support)


@dataclass(frozen=True)
class Grouping:
    groups: list[ItemGroup]
    dead_items: np.ndarray


@dataclass(frozen=True)
class SegmentSet:
    segments: list[ItemGroup]
    B_bar_s: SparseMatrix
    tau: float
    dead_items: np.ndarray
    merges: int = 0

    def __len__(self) -> int:
        return len(self.segments)


def _csr(A_bar_s: SparseMatrix | np.ndarray) -> SparseMatrix:
    if isinstance(A_bar_s, SparseMatrix):
        return A_bar_s.to_layout(Layout.CSR)
    return SparseMatrix.from_dense(np.asarray(A_bar_s), Layout.CSR)


def dominant_factor(A_bar_s: SparseMatrix | np.ndarray, i: int) -> SignedFactor:
    csr = _csr(A_bar_s)
    start, stop = csr.indptr[i], csr.indptr[i + 1]
    values = csr.data[start:stop]
    if not np.any(values != 0):
        raise DeadLatentError(f"item {i} has no active latent dimension")
    best = int(np.argmax(np.abs(values)))
    return SignedFactor(int(csr.indices[start + best]), 1 if values[best] > 0 else -1)


def group_items(A_bar_s: SparseMatrix | np.ndarray) -> Grouping:
    csr = _csr(A_bar_s)
    members: dict[SignedFactor, list[int]] = {}
    dead = []
    for item in range(csr.shape[0]):
        try:
            factor = dominant_factor(csr, item)
        except DeadLatentError:
            dead.append(item)
            continue
        members.setdefault(factor, []).append(item)
    groups = [
        ItemGroup(group_id=gid, members=tuple(items), support=Counter({factor: len(items)}))
        for gid, (factor, items) in enumerate(sorted(members.items()))
    ]
    if dead:
        _logger.warning("%d items have dead embeddings and stay unsegmented", len(dead))
    return Grouping(groups=groups, dead_items=np.asarray(dead, dtype=np.int64))


def _describe(
    group: ItemGroup, provider: DescriptorProvider, metadata: ItemMetadata | None
) -> tuple[str | None, np.ndarray | None]:
    try:
        text = provider.describe(group.members, metadata)
        return text, (unit(provider.embed(text)) if text is not None else None)
    except SegmentationError:
        raise
    except Exception as exc:
        raise SegmentationError(f"descriptor provider failed for group {group.group_id}: {exc}") from exc


def _initial_descriptor(
    group: ItemGroup, provider: DescriptorProvider, metadata: ItemMetadata | None
) -> ItemGroup:
    text, vector = _describe(group, provider, metadata)
    if text is None:
        text = "latent " + " ".join(f.label() for f in group.factors)
        try:
            vector = unit(provider.embed(text))
        except Exception as exc:
            raise SegmentationError(f"descriptor provider failed for group {group.group_id}: {exc}") from exc
    return ItemGroup(group.group_id, group.members, group.support, text, vector)


def _merge_pair(
    left: ItemGroup, right: ItemGroup, provider: DescriptorProvider, metadata: ItemMetadata | None
) -> ItemGroup:
    merged = ItemGroup(
        group_id=min(left.group_id, right.group_id),
        members=tuple(sorted(left.members + right.members)),
        support=left.support + right.support,
    )
    try:
        text, vector = _describe(merged, provider, metadata)
    except SegmentationError as exc:
        raise SegmentationError(f"merging groups {left.group_id} and {right.group_id}: {exc}") from exc
    if text is None:
        text = f"{left.descriptor} + {right.descriptor}"
        vector = unit((left.vector + right.vector) / 2.0)
    return ItemGroup(merged.group_id, merged.members, merged.support, text, vector)


def merge_segments(
    groups: Sequence[ItemGroup] | Grouping,
    provider: DescriptorProvider,
    tau: float = DEFAULT_TAU,
    d: int | None = None,
    metadata: ItemMetadata | None = None,
) -> SegmentSet:
    """Merge the most similar pair of groups while their cosine similarity exceeds ``tau``.

    Ties go to the pair with the smallest group ids; the merged group keeps
    the smaller id.
    """
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")
    dead = np.zeros(0, dtype=np.int64)
    if isinstance(groups, Grouping):
        dead = groups.dead_items
        groups = groups.groups
    active = sorted(
        (_initial_descriptor(g, provider, metadata) for g in groups), key=lambda g: g.group_id
    )
    merges = 0
    while len(active) > 1:
        vectors = np.stack([g.vector for g in active])
        sims = vectors @ vectors.T
        sims[np.tril_indices(len(active))] = -np.inf
        flat = int(np.argmax(sims))
        i, j = divmod(flat, len(active))
        if sims[i, j] <= tau:
            break
        _logger.debug("merging groups %d and %d (cos=%.4f)", active[i].group_id, active[j].group_id, sims[i, j])
        active[i] = _merge_pair(active[i], active[j], provider, metadata)
        del active[j]
        merges += 1

    width = d if d is not None else 1 + max((f.dim for g in active for f in g.support), default=-1)
    B_bar_s = build_segment_matrix(active, width)
    _logger.info("built %d segments from %d groups (%d merges, tau=%.2f)", len(active), len(groups), merges, tau)
    return SegmentSet(segments=active, B_bar_s=B_bar_s, tau=tau, dead_items=dead, merges=merges)


def resolved_factors(group: ItemGroup) -> list[SignedFactor]:
    """One sign per dimension; a conflict keeps the sign with more member support, + on a tie."""
    by_dim: dict[int, SignedFactor] = {}
    for factor in group.factors:
        chosen = by_dim.get(factor.dim)
        if chosen is None:
            by_dim[factor.dim] = factor
            continue
        positive = SignedFactor(factor.dim, 1)
        negative = SignedFactor(factor.dim, -1)
        keep = positive if group.support[positive] >= group.support[negative] else negative
        _logger.warning(
            "segment %d carries both signs on dim %d; keeping %s", group.group_id, factor.dim, keep.label()
        )
        by_dim[factor.dim] = keep
    return [by_dim[dim] for dim in sorted(by_dim)]


def build_segment_matrix(segments: Sequence[ItemGroup], d: int) -> SparseMatrix:
    rows, cols, vals = [], [], []
    for c, segment in enumerate(segments):
        factors = resolved_factors(segment)
        if any(not 0 <= f.dim < d for f in factors):
            raise ShapeMismatchError(f"segment {segment.group_id} uses a dimension outside [0, {d})")
        scale = 1.0 / np.sqrt(len(factors))
        for factor in factors:
            rows.append(c)
            cols.append(factor.dim)
            vals.append(factor.sign * scale)
    matrix = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(len(segments), d),
    )
    return SparseMatrix.from_scipy(matrix, Layout.CSR, dtype=np.float64)


def segment_scores(
    items: np.ndarray | list[int], engine: SparseInferenceEngine, B_bar_s: SparseMatrix
) -> np.ndarray:
    """x^T A_bar_s B_bar_s^T; no self-interaction term."""
    if B_bar_s.shape[1] != engine.d:
        raise ShapeMismatchError(f"segment matrix has {B_bar_s.shape[1]} dims, engine has {engine.d}")
    z, _ = user_embedding(items, engine)
    return VectorIndex.from_matrix(B_bar_s).score(z)


def recommend_segments(
    items: np.ndarray | list[int],
    engine: SparseInferenceEngine,
    segment_set: SegmentSet,
    n_segments: int = 3,
    n_items: int = 10,
    exclude_seen: bool = True,
) -> list[dict[str, object]]:
    """Top segments for the user, each with its best items by the segment's latent direction."""
    scores = segment_scores(items, engine, segment_set.B_bar_s)
    order = np.lexsort((np.arange(len(scores)), -scores))[:n_segments]
    catalogue = VectorIndex(rows=engine.rows())
    seen = np.asarray(items, dtype=np.int64) if exclude_seen else np.zeros(0, dtype=np.int64)
    dense_rows = segment_set.B_bar_s.to_dense()
    recommendations = []
    for c in order:
        segment = segment_set.segments[int(c)]
        best = catalogue.search(dense_rows[int(c)], n_items, seen)
        recommendations.append(
            {
                "segment_id": segment.group_id,
                "descriptor": segment.descriptor,
                "score": float(scores[c]),
                "items": best.items.tolist(),
            }
        )
    return recommendations


def grouping_purity(groups: Sequence[ItemGroup], labels: np.ndarray) -> float:
    """Member-weighted share of items carrying their group's majority label."""
    labels = np.asarray(labels)
    total = sum(len(g.members) for g in groups)
    if total == 0:
        return 0.0
    majority = sum(np.bincount(labels[list(g.members)]).max() for g in groups)
    return float(majority) / total


def segment_records(segment_set: SegmentSet, item_ids: Sequence[str] | None = None) -> list[SegmentRecord]:
    records = []
    for segment in segment_set.segments:
        members = list(segment.members)
        records.append(
            SegmentRecord(
                segment_id=segment.group_id,
                descriptor=segment.descriptor,
                member_items=members,
                latent_dims=[(f.dim, f.sign) for f in resolved_factors(segment)],
                member_ids=[str(item_ids[i]) for i in members] if item_ids is not None else [],
            )
        )
    return records
