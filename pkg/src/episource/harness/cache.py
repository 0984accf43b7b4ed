"""On-disk stage artifacts keyed by content hashes of their inputs."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from ..epidemics import SimDataset, load_dataset, save_dataset
from ..estimators import StateProbTable
from ..netgraph import Graph
from ..nnet import ModelBundle

log = logging.getLogger(__name__)


def cache_key(*parts) -> str:
    h = hashlib.blake2b(b"|".join(str(p).encode() for p in parts), digest_size=16)
    return h.hexdigest()


class StageCache:
    """Load-or-rebuild persistence for datasets, tables, and model bundles.

    Every load validates the artifact's embedded upstream hash; anything
    inconsistent or unreadable is discarded and rebuilt.
    """

    def __init__(self, root: Path | str | None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, kind: str, key: str) -> Path | None:
        return None if self.root is None else self.root / f"{kind}-{key}.bin"

    def dataset(self, key: str, graph: Graph, builder) -> SimDataset:
        path = self._path("dataset", key)
        if path is not None and path.exists():
            try:
                return load_dataset(path, graph=graph)
            except Exception as exc:  # rebuild on any cache damage
                log.warning("discarding cached dataset %s: %s", path.name, exc)
        ds = builder()
        if path is not None:
            save_dataset(ds, path)
        return ds

    def table(self, key: str, graph_hash: str, builder) -> StateProbTable:
        path = self._path("table", key)
        if path is not None and path.exists():
            try:
                table = StateProbTable.load(path)
                if table.graph_hash == graph_hash:
                    return table
                log.warning("cached table %s belongs to another graph", path.name)
            except Exception as exc:
                log.warning("discarding cached table %s: %s", path.name, exc)
        table = builder()
        if path is not None:
            table.save(path)
        return table

    def bundle(self, key: str, data_hash: str, builder) -> tuple[ModelBundle, list | None]:
        """Returns (bundle, curves); curves are None when loaded from cache."""
        path = self._path("bundle", key)
        if path is not None and path.exists():
            try:
                bundle = ModelBundle.load(path)
                if bundle.meta.data_hash == data_hash:
                    return bundle, None
                log.warning("cached bundle %s was trained on other data", path.name)
            except Exception as exc:
                log.warning("discarding cached bundle %s: %s", path.name, exc)
        bundle, curves = builder()
        if path is not None:
            bundle.save(path)
        return bundle, curves
