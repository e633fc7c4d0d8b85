from __future__ import annotations

import logging
from typing import Any

from compressed_elsa.experiment import GridCell, run_cell
from compressed_elsa.interactions import DatasetSplit
from compressed_elsa.types import FoldInConfig

try:
    from dask.distributed import Client, LocalCluster  # type: ignore
except Exception:  # pragma: no cover - optional dependency
    Client = None
    LocalCluster = None

_logger = logging.getLogger(__name__)

Outcome = tuple[dict[str, Any], dict[str, Any]]


def run_cells(cells: list[GridCell], split: DatasetSplit, protocol: FoldInConfig, workers: int = 1) -> list[Outcome]:
    """Run grid cells in order; with ``workers > 1`` and dask installed they run on a local cluster."""
    if workers <= 1 or Client is None or LocalCluster is None or len(cells) < 2:
        if workers > 1 and Client is None:
            _logger.info("dask is not installed; running %d cells sequentially", len(cells))
        return [run_cell(cell, split, protocol) for cell in cells]

    cluster = LocalCluster(n_workers=workers, threads_per_worker=1)
    client = Client(cluster)
    try:
        shared_split = client.scatter(split, broadcast=True)
        futures = client.map(run_cell, cells, split=shared_split, protocol=protocol, pure=False)
        return client.gather(futures)
    finally:
        client.close()
        cluster.close()
