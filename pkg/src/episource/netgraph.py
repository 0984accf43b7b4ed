"""Immutable undirected graphs, edge-list ingestion, and topology measures."""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GraphParseError(ValueError):
    """Raised when an edge-list line cannot be parsed."""


class GraphValidationError(ValueError):
    """Raised when parsed input violates a graph invariant."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph in CSR form with a dense node indexing.

    Nodes carry external string labels mapped to indices 0..N-1 in order of
    first appearance. Edge weights default to 1.0 and must be positive.
    Instances are immutable and safe to share across workers.
    """

    n: int
    indptr: np.ndarray      # int64, shape (n+1,)
    indices: np.ndarray     # int64, neighbor indices, sorted per node
    weights: np.ndarray     # float64, parallel to indices
    labels: tuple[str, ...]
    label_index: dict[str, int] = field(repr=False)

    @property
    def edge_count(self) -> int:
        return self.indices.shape[0] // 2

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_weight_slice(self, v: int) -> np.ndarray:
        return self.weights[self.indptr[v]:self.indptr[v + 1]]

    def edges(self):
        """Yield (u, v, w) with u < v, in ascending order."""
        for u in range(self.n):
            for j in range(self.indptr[u], self.indptr[u + 1]):
                v = int(self.indices[j])
                if u < v:
                    yield u, v, float(self.weights[j])

    def is_weighted(self) -> bool:
        return bool(np.any(self.weights != 1.0))

    def content_hash(self) -> str:
        """Stable hash of the canonical edge list (labels excluded)."""
        h = hashlib.blake2b(digest_size=16)
        h.update(str(self.n).encode())
        for u, v, w in self.edges():
            h.update(f"|{u},{v},{w!r}".encode())
        return h.hexdigest()

    def validate_node(self, v: int) -> None:
        if not 0 <= v < self.n:
            raise GraphValidationError(f"node index {v} out of range [0, {self.n})")


def from_edges(edges, labels=None) -> Graph:
    """Build a Graph from (u, v) or (u, v, w) index tuples.

    Duplicate undirected edges collapse (first weight wins); self-loops are
    rejected. `labels` defaults to stringified indices.
    """
    seen: dict[tuple[int, int], float] = {}
    n = 0
    for e in edges:
        if len(e) == 3:
            u, v, w = e
        else:
            u, v = e
            w = 1.0
        u, v = int(u), int(v)
        if u == v:
            raise GraphValidationError(f"self-loop at node {u}")
        if w <= 0:
            raise GraphValidationError(f"non-positive weight {w} on edge ({u}, {v})")
        n = max(n, u + 1, v + 1)
        key = (min(u, v), max(u, v))
        seen.setdefault(key, float(w))
    if n == 0:
        raise GraphValidationError("graph has zero nodes")
    if labels is None:
        labels = tuple(str(i) for i in range(n))
    else:
        labels = tuple(labels)
        if len(labels) != n:
            raise GraphValidationError(f"{len(labels)} labels for {n} nodes")
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for (u, v), w in seen.items():
        adj[u].append((v, w))
        adj[v].append((u, w))
    indptr = np.zeros(n + 1, dtype=np.int64)
    for v in range(n):
        adj[v].sort()
        indptr[v + 1] = indptr[v] + len(adj[v])
    indices = np.empty(indptr[-1], dtype=np.int64)
    weights = np.empty(indptr[-1], dtype=np.float64)
    for v in range(n):
        for j, (u, w) in enumerate(adj[v]):
            indices[indptr[v] + j] = u
            weights[indptr[v] + j] = w
    return Graph(n=n, indptr=indptr, indices=indices, weights=weights,
                 labels=labels, label_index={lab: i for i, lab in enumerate(labels)})


def load_edge_list(text: str, require_connected: bool = True) -> Graph:
    """Parse edge-list text: one "u v" or "u v w" per line, '#' comments.

    Labels are arbitrary tokens mapped to dense indices by first appearance.
    The full input graph must be connected unless `require_connected=False`
    (subgraphs and other internal constructions bypass the check).
    """
    label_index: dict[str, int] = {}
    edges: list[tuple[int, int, float]] = []

    def idx(tok: str) -> int:
        if tok not in label_index:
            label_index[tok] = len(label_index)
        return label_index[tok]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphParseError(f"line {lineno}: expected 'u v' or 'u v w', got {raw!r}")
        u, v = idx(parts[0]), idx(parts[1])
        w = 1.0
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise GraphParseError(f"line {lineno}: bad weight {parts[2]!r}") from None
            if not math.isfinite(w) or w <= 0:
                raise GraphValidationError(f"line {lineno}: weight must be positive, got {w}")
        if u == v:
            raise GraphValidationError(f"line {lineno}: self-loop on {parts[0]!r}")
        edges.append((u, v, w))

    if not label_index:
        raise GraphValidationError("edge list contains zero nodes")
    labels = tuple(sorted(label_index, key=label_index.get))
    g = from_edges(edges, labels=labels)
    if require_connected:
        ncomp = component_count(g)
        if ncomp != 1:
            raise GraphValidationError(
                f"input graph must be connected; found {ncomp} components")
    return g


def load_edge_list_file(path, require_connected: bool = True) -> Graph:
    with open(path, "r", encoding="utf-8") as f:
        return load_edge_list(f.read(), require_connected=require_connected)


def shortest_path_lengths(g: Graph, source: int) -> np.ndarray:
    """BFS hop distances from `source`; unreachable nodes get inf."""
    g.validate_node(source)
    dist = np.full(g.n, np.inf)
    dist[source] = 0.0
    q = deque([source])
    while q:
        v = q.popleft()
        dv = dist[v]
        for u in g.neighbors(v):
            if dist[u] == np.inf:
                dist[u] = dv + 1.0
                q.append(int(u))
    return dist


def all_pairs_distances(g: Graph) -> np.ndarray:
    """Dense (n, n) hop-distance matrix via repeated BFS."""
    out = np.empty((g.n, g.n))
    for v in range(g.n):
        out[v] = shortest_path_lengths(g, v)
    return out


def component_count(g: Graph) -> int:
    seen = np.zeros(g.n, dtype=bool)
    count = 0
    for s in range(g.n):
        if seen[s]:
            continue
        count += 1
        seen[s] = True
        q = deque([s])
        while q:
            v = q.popleft()
            for u in g.neighbors(v):
                if not seen[u]:
                    seen[u] = True
                    q.append(int(u))
    return count


def is_connected(g: Graph) -> bool:
    return component_count(g) == 1


def betweenness_centrality(g: Graph) -> np.ndarray:
    """Unweighted shortest-path betweenness (Brandes), endpoints excluded.

    Raw counts, unnormalized: only ranks are consumed downstream and
    normalization constants cancel. Each unordered pair contributes once.
    """
    bc = np.zeros(g.n)
    for s in range(g.n):
        sigma = np.zeros(g.n)
        sigma[s] = 1.0
        dist = np.full(g.n, -1, dtype=np.int64)
        dist[s] = 0
        preds: list[list[int]] = [[] for _ in range(g.n)]
        order: list[int] = []
        q = deque([s])
        while q:
            v = q.popleft()
            order.append(v)
            for u in g.neighbors(v):
                u = int(u)
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    q.append(u)
                if dist[u] == dist[v] + 1:
                    sigma[u] += sigma[v]
                    preds[u].append(v)
        delta = np.zeros(g.n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc / 2.0


def clustering_coefficient(g: Graph, v: int) -> float:
    """Local clustering: triangles / (deg choose 2); 0 when deg < 2."""
    g.validate_node(v)
    nbrs = g.neighbors(v)
    d = nbrs.shape[0]
    if d < 2:
        return 0.0
    nbr_set = set(int(u) for u in nbrs)
    tri = 0
    for u in nbrs:
        for w in g.neighbors(int(u)):
            if int(w) in nbr_set:
                tri += 1
    return tri / (d * (d - 1))


def average_clustering(g: Graph) -> float:
    return float(np.mean([clustering_coefficient(g, v) for v in range(g.n)]))


@dataclass(frozen=True)
class TopologyStats:
    """Summary topology statistics for a connected graph."""

    n_nodes: int
    n_edges: int
    avg_degree: float
    avg_shortest_path: float
    diameter: int
    avg_clustering: float

    def to_json(self) -> str:
        return json.dumps({
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "avg_degree": self.avg_degree,
            "avg_shortest_path": self.avg_shortest_path,
            "diameter": self.diameter,
            "avg_clustering": self.avg_clustering,
        }, indent=2)


def graph_stats(g: Graph) -> TopologyStats:
    """All Table-style topology columns, computed exactly (all-pairs BFS)."""
    ncomp = component_count(g)
    if ncomp != 1:
        raise GraphValidationError(
            f"stats require a connected graph; found {ncomp} components")
    dists = all_pairs_distances(g)
    off = ~np.eye(g.n, dtype=bool)
    pair_d = dists[off]
    return TopologyStats(
        n_nodes=g.n,
        n_edges=g.edge_count,
        avg_degree=2.0 * g.edge_count / g.n,
        avg_shortest_path=float(pair_d.mean()) if g.n > 1 else 0.0,
        diameter=int(pair_d.max()) if g.n > 1 else 0,
        avg_clustering=average_clustering(g),
    )


def induced_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Subgraph on `nodes` plus the sub-index -> parent-index map.

    Keeps edges with both endpoints in the set; parent labels carry over.
    """
    keep = sorted(set(int(v) for v in nodes))
    if not keep:
        raise GraphValidationError("induced subgraph of an empty node set")
    for v in keep:
        g.validate_node(v)
    to_sub = {v: i for i, v in enumerate(keep)}
    edges = []
    for v in keep:
        sl = g.indptr[v], g.indptr[v + 1]
        for u, w in zip(g.indices[sl[0]:sl[1]], g.weights[sl[0]:sl[1]]):
            u = int(u)
            if u in to_sub and v < u:
                edges.append((to_sub[v], to_sub[u], float(w)))
    labels = tuple(g.labels[v] for v in keep)
    if not edges:
        # isolated nodes only: build CSR directly
        n = len(keep)
        sub = Graph(n=n, indptr=np.zeros(n + 1, dtype=np.int64),
                    indices=np.empty(0, dtype=np.int64),
                    weights=np.empty(0, dtype=np.float64),
                    labels=labels, label_index={l: i for i, l in enumerate(labels)})
    else:
        sub = from_edges(edges, labels=None)
        if sub.n < len(keep):  # trailing isolated nodes missed by from_edges
            sub = _pad_isolated(sub, len(keep))
        sub = Graph(n=sub.n, indptr=sub.indptr, indices=sub.indices,
                    weights=sub.weights, labels=labels,
                    label_index={l: i for i, l in enumerate(labels)})
    return sub, np.asarray(keep, dtype=np.int64)


def _pad_isolated(g: Graph, n: int) -> Graph:
    indptr = np.concatenate([g.indptr, np.full(n - g.n, g.indptr[-1], dtype=np.int64)])
    labels = g.labels + tuple(str(i) for i in range(g.n, n))
    return Graph(n=n, indptr=indptr, indices=g.indices, weights=g.weights,
                 labels=labels, label_index={l: i for i, l in enumerate(labels)})


def eccentricities(g: Graph) -> np.ndarray:
    """Max BFS distance per node; requires a connected graph."""
    if not is_connected(g):
        raise GraphValidationError(
            "eccentricity undefined on a disconnected graph; "
            "pass the largest connected component")
    dists = all_pairs_distances(g)
    return dists.max(axis=1)


def jordan_center(g: Graph) -> set[int]:
    """All nodes minimizing eccentricity."""
    ecc = eccentricities(g)
    best = ecc.min()
    return set(int(v) for v in np.flatnonzero(ecc == best))


def closeness_centrality(g: Graph) -> np.ndarray:
    """(N-1) / sum of distances, within the (connected) graph."""
    if g.n == 1:
        return np.zeros(1)
    dists = all_pairs_distances(g)
    if np.isinf(dists).any():
        raise GraphValidationError("closeness requires a connected graph")
    return (g.n - 1) / dists.sum(axis=1)


def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi - lo == 0:
        return np.zeros_like(col)  # constant column maps to zeros
    return (col - lo) / (hi - lo)


def node_feature_augmentation(g: Graph) -> np.ndarray:
    """Per-node [degree, betweenness, closeness, clustering], min-max scaled."""
    if not is_connected(g):
        raise GraphValidationError("feature augmentation requires a connected graph")
    cols = np.stack([
        g.degrees().astype(np.float64),
        betweenness_centrality(g),
        closeness_centrality(g),
        np.array([clustering_coefficient(g, v) for v in range(g.n)]),
    ], axis=1)
    return np.stack([_minmax(cols[:, j]) for j in range(4)], axis=1)
