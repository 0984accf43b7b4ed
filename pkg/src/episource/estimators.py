"""Non-neural source detectors producing comparable per-node outputs.

Random, Jordan-center, and betweenness estimators are heuristics emitting
rank scores; the simulation-backed SME and MCMF estimators emit normalized
posteriors. All of them assign zero mass (or bottom rank) to susceptible
nodes, and every downstream ranking breaks ties by ascending node index.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import netgraph
from .epidemics import STATE_S, SimDataset, Snapshot

log = logging.getLogger(__name__)

_TAB_MAGIC = b"EPIDTAB\x01"

PROBABILISTIC = "probabilistic"
RANKING = "ranking"


class AllSusceptibleError(ValueError):
    """Snapshot contains no infected or recovered node."""


@dataclass(frozen=True)
class SourceDistribution:
    """Per-node source scores: a normalized posterior or bare rank scores."""

    kind: str                 # PROBABILISTIC or RANKING
    scores: np.ndarray        # probs summing to 1, or rank scores (-inf on S)

    def __post_init__(self):
        if self.kind not in (PROBABILISTIC, RANKING):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == PROBABILISTIC:
            s = float(self.scores.sum())
            if abs(s - 1.0) > 1e-9 or (self.scores < 0).any():
                raise ValueError(f"probabilities must be nonnegative and sum to 1, sum={s}")

    @property
    def probs(self) -> np.ndarray:
        if self.kind != PROBABILISTIC:
            raise ValueError("rank-score distribution has no probabilities")
        return self.scores

    def order(self) -> np.ndarray:
        """Node indices from most to least likely, index tie-break."""
        n = self.scores.shape[0]
        return np.lexsort((np.arange(n), -self.scores))

    def map_estimate(self) -> int:
        return int(self.order()[0])

    def to_json(self, labels=None) -> str:
        vals = self.scores.tolist()
        if labels is None:
            labels = [str(i) for i in range(len(vals))]
        return json.dumps({"kind": self.kind,
                           "scores": dict(zip(labels, vals))}, indent=2)


def _require_candidates(snapshot: Snapshot) -> np.ndarray:
    mask = snapshot.non_susceptible
    if not mask.any():
        raise AllSusceptibleError("snapshot has no infected or recovered node")
    return mask


def _masked_probs(raw: np.ndarray, mask: np.ndarray) -> SourceDistribution:
    probs = np.where(mask, np.clip(raw, 0.0, None), 0.0)
    total = probs.sum()
    if total <= 0.0:
        probs = mask.astype(np.float64)  # degenerate: uniform over candidates
        total = probs.sum()
    return SourceDistribution(kind=PROBABILISTIC, scores=probs / total)


def random_estimator(snapshot: Snapshot, seed: int | None = None) -> SourceDistribution:
    """Uniform probability over the infected subgraph (I and R nodes).

    `seed` is accepted for interface parity with sampling-based baselines;
    the returned distribution itself is deterministic.
    """
    del seed
    mask = _require_candidates(snapshot)
    return SourceDistribution(kind=PROBABILISTIC,
                              scores=mask / np.count_nonzero(mask))


def jordan_estimator(g: netgraph.Graph, snapshot: Snapshot) -> SourceDistribution:
    """Rank infected nodes by (negated) eccentricity within the infected subgraph."""
    mask = _require_candidates(snapshot)
    nodes = np.flatnonzero(mask)
    sub, to_parent = netgraph.induced_subgraph(g, nodes)
    ecc = netgraph.eccentricities(sub)
    scores = np.full(g.n, -np.inf)
    scores[to_parent] = -ecc
    return SourceDistribution(kind=RANKING, scores=scores)


def betweenness_estimator(g: netgraph.Graph, snapshot: Snapshot) -> SourceDistribution:
    """Rank infected nodes by betweenness within the infected subgraph."""
    mask = _require_candidates(snapshot)
    nodes = np.flatnonzero(mask)
    sub, to_parent = netgraph.induced_subgraph(g, nodes)
    bc = netgraph.betweenness_centrality(sub)
    scores = np.full(g.n, -np.inf)
    scores[to_parent] = bc
    return SourceDistribution(kind=RANKING, scores=scores)


def jaccard_similarity(s1: Snapshot, s2: Snapshot) -> float:
    """|A∩B| / |A∪B| over non-susceptible node sets; 1.0 when both empty."""
    a, b = s1.non_susceptible, s2.non_susceptible
    if a.shape != b.shape:
        raise ValueError("snapshots live on different graphs")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


# ---------------------------------------------------------------------------
# Soft-margin estimator
# ---------------------------------------------------------------------------

def _default_a_grid() -> tuple[float, ...]:
    return tuple(2.0 ** -k for k in range(11))  # 1.0 down to 2^-10


@dataclass(frozen=True)
class SmeConfig:
    """Convergence-parameter grid and bootstrap settings."""

    a_grid: tuple[float, ...] = field(default_factory=_default_a_grid)
    convergence_tol: float = 0.05
    bootstrap_resamples: int = 100

    def __post_init__(self):
        grid = tuple(self.a_grid)
        if not grid or any(a <= 0 for a in grid):
            raise ValueError("a_grid must be nonempty and strictly positive")
        if any(x <= y for x, y in zip(grid, grid[1:])):
            raise ValueError("a_grid must be strictly descending")
        object.__setattr__(self, "a_grid", grid)


class SmeEvaluator:
    """Shared precomputation for evaluating SME on many snapshots.

    Holds the per-record infected masks of a balanced dataset; per-snapshot
    similarity scores are one masked matrix product.
    """

    def __init__(self, dataset: SimDataset, cfg: SmeConfig | None = None):
        self.cfg = cfg or SmeConfig()
        self.n_sources = dataset.n_nodes
        self.n_per_source = dataset.n_per_source
        if len(dataset) != self.n_sources * self.n_per_source:
            raise ValueError("SME requires a balanced dataset")
        self._masks = (dataset.states != STATE_S).astype(np.float64)
        self._sizes = self._masks.sum(axis=1)

    def phi(self, states: np.ndarray) -> np.ndarray:
        """Jaccard similarity of `states` to every record, shaped (N, n)."""
        snap = (states != STATE_S).astype(np.float64)
        size_b = snap.sum()
        inter = self._masks @ snap
        union = self._sizes + size_b - inter
        phi = np.divide(inter, union, out=np.ones_like(inter), where=union > 0)
        return phi.reshape(self.n_sources, self.n_per_source)

    def likelihoods(self, states: np.ndarray, a: float) -> np.ndarray:
        """Mean Gaussian-weighted similarity per candidate source."""
        if a <= 0:
            raise ValueError("a must be positive")
        phi = self.phi(states)
        return np.exp(-((phi - 1.0) ** 2) / a**2).mean(axis=1)

    def _bootstrap_counts(self, rng: np.random.Generator) -> np.ndarray:
        """Resample-with-replacement counts, shape (N, R, n); 2n draws each."""
        n, big_n, r = self.n_per_source, self.n_sources, self.cfg.bootstrap_resamples
        draws = rng.integers(0, n, size=(big_n, r, 2 * n))
        base = (np.arange(big_n * r) * n)[:, None]
        flat = np.bincount((draws.reshape(big_n * r, 2 * n) + base).ravel(),
                           minlength=big_n * r * n)
        return flat.reshape(big_n, r, n).astype(np.float64)

    def select_a(self, states: np.ndarray, seed: int) -> tuple[float, bool]:
        """Smallest grid value whose n-sample and bootstrap-2n MAP posteriors agree.

        Falls back to the smallest tested value (logged) when nothing converges.
        """
        cand = states != STATE_S
        if not cand.any():
            raise AllSusceptibleError("snapshot has no infected or recovered node")
        if self.n_per_source < 2:
            # a bootstrap over one record carries no information
            log.warning("SME needs >= 2 records per source to assess "
                        "convergence; falling back to smallest grid value")
            return self.cfg.a_grid[-1], False
        rng = np.random.Generator(np.random.Philox(key=seed))
        counts = self._bootstrap_counts(rng)
        d = -((self.phi(states) - 1.0) ** 2)
        idx = np.arange(self.n_sources)
        best: float | None = None
        for a in self.cfg.a_grid:
            w = np.exp(d / a**2)                     # (N, n)
            like_n = w.mean(axis=1)
            post_n = _normalize_masked(like_n, cand)
            q_map = int(np.lexsort((idx, -post_n))[0])
            like_2n = np.einsum("qrn,qn->qr", counts, w) / (2 * self.n_per_source)
            post_2n = _normalize_masked_columns(like_2n, cand)
            p2n = float(post_2n[q_map].mean())
            if abs(post_n[q_map] - p2n) <= self.cfg.convergence_tol:
                best = a  # grid is descending; keep walking for a smaller one
        if best is not None:
            return best, True
        smallest = self.cfg.a_grid[-1]
        log.warning("SME convergence criterion never satisfied; "
                    "falling back to smallest grid value a=%g", smallest)
        return smallest, False

    def posterior(self, states: np.ndarray, seed: int) -> tuple[SourceDistribution, float, bool]:
        a, converged = self.select_a(states, seed)
        like = self.likelihoods(states, a)
        snap = Snapshot(states=states, observed_at=0.0)
        dist = _masked_probs(like, snap.non_susceptible)
        return dist, a, converged


def _normalize_masked(vals: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.where(mask, vals, 0.0)
    s = out.sum()
    if s <= 0:
        out = mask.astype(np.float64)
        s = out.sum()
    return out / s


def _normalize_masked_columns(vals: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.where(mask[:, None], vals, 0.0)
    s = out.sum(axis=0)
    bad = s <= 0
    if bad.any():
        out[:, bad] = mask[:, None].astype(np.float64)
        s = out.sum(axis=0)
    return out / s


def sme_likelihoods(snapshot: Snapshot, dataset: SimDataset, a: float) -> np.ndarray:
    """Estimated P(observed | source q) for every q, at convergence parameter a."""
    return SmeEvaluator(dataset).likelihoods(snapshot.states, a)


def sme_select_a(snapshot: Snapshot, dataset: SimDataset,
                 cfg: SmeConfig | None = None, seed: int = 0) -> float:
    a, _ = SmeEvaluator(dataset, cfg).select_a(snapshot.states, seed)
    return a


def sme_estimator(snapshot: Snapshot, dataset: SimDataset,
                  cfg: SmeConfig | None = None, seed: int = 0) -> SourceDistribution:
    dist, _, _ = SmeEvaluator(dataset, cfg).posterior(snapshot.states, seed)
    return dist


# ---------------------------------------------------------------------------
# Monte Carlo mean-field estimator
# ---------------------------------------------------------------------------

@dataclass
class StateProbTable:
    """Add-one-smoothed P(node state | candidate source) estimates.

    probs[q, v, s] estimates the probability that node v is in state s at the
    observation time given the outbreak started at q. The source diagonal
    excludes S (a source cannot remain susceptible).
    """

    probs: np.ndarray          # float64 (N, N, 3)
    n_per_source: int
    graph_hash: str

    @cached_property
    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            lp = np.log(self.probs)
        lp[self.probs == 0.0] = -np.inf
        return lp

    def save(self, path) -> None:
        n = self.probs.shape[0]
        with open(path, "wb") as f:
            f.write(_TAB_MAGIC)
            f.write(bytes.fromhex(self.graph_hash))
            f.write(struct.pack("<II", n, self.n_per_source))
            f.write(self.probs.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "StateProbTable":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:len(_TAB_MAGIC)] != _TAB_MAGIC:
            raise ValueError("not a state-probability table file")
        off = len(_TAB_MAGIC)
        graph_hash = blob[off:off + 16].hex()
        off += 16
        n, n_per_source = struct.unpack_from("<II", blob, off)
        off += 8
        need = n * n * 3 * 8
        if len(blob) - off != need:
            raise ValueError("truncated state-probability table")
        probs = np.frombuffer(blob, dtype="<f8", count=n * n * 3,
                              offset=off).reshape(n, n, 3).copy()
        return cls(probs=probs, n_per_source=n_per_source, graph_hash=graph_hash)

    def content_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.graph_hash.encode())
        h.update(self.probs.tobytes())
        return h.hexdigest()


def mcmf_state_probs(dataset: SimDataset) -> StateProbTable:
    """Count per-(source, node) state frequencies with add-one smoothing."""
    n_nodes = dataset.n_nodes
    n = dataset.n_per_source
    if len(dataset) != n_nodes * n:
        raise ValueError("MCMF requires a balanced dataset")
    counts = np.zeros((n_nodes, n_nodes, 3), dtype=np.int64)
    for q in range(n_nodes):
        block = dataset.states[dataset.records_of_source(q)]
        for s in range(3):
            counts[q, :, s] = (block == s).sum(axis=0)
    probs = (counts + 1.0) / (n + 3.0)
    diag = np.arange(n_nodes)
    probs[diag, diag, :] = (counts[diag, diag, :] + 1.0) / (n + 2.0)
    probs[diag, diag, STATE_S] = 0.0
    return StateProbTable(probs=probs, n_per_source=n,
                          graph_hash=dataset.graph_hash)


def mcmf_log_likelihoods(states: np.ndarray, table: StateProbTable) -> np.ndarray:
    """Factorized log-likelihood of the snapshot for every candidate source."""
    n = table.probs.shape[0]
    if states.shape[0] != n:
        raise ValueError("snapshot and table node spaces differ")
    picked = table.log_probs[:, np.arange(n), states.astype(np.int64)]
    return picked.sum(axis=1)


def posterior_from_log_likelihoods(loglik: np.ndarray,
                                   mask: np.ndarray) -> SourceDistribution:
    """Normalize masked log-likelihoods into a posterior via log-sum-exp."""
    ll = np.where(mask, loglik, -np.inf)
    top = ll.max()
    if not np.isfinite(top):
        return _masked_probs(mask.astype(np.float64), mask)
    shifted = np.exp(ll - top)
    probs = shifted / shifted.sum()
    return SourceDistribution(kind=PROBABILISTIC, scores=probs)


def mcmf_posterior(snapshot: Snapshot, table: StateProbTable) -> SourceDistribution:
    """Posterior over non-susceptible candidates via log-sum-exp normalization."""
    mask = _require_candidates(snapshot)
    return posterior_from_log_likelihoods(mcmf_log_likelihoods(snapshot.states, table),
                                          mask)
