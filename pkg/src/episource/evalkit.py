"""Evaluation metrics for source detection suites and cross-run intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .estimators import PROBABILISTIC, SourceDistribution
from .netgraph import Graph, shortest_path_lengths

_CUM_EPS = 1e-12    # guards credible-set cumsum against float drift


def rank_of_source(dist: SourceDistribution, true_source: int) -> int:
    """1-based rank under descending score with ascending-index tie-break."""
    scores = dist.scores
    if not 0 <= true_source < scores.shape[0]:
        raise ValueError("true source outside the node space")
    s = scores[true_source]
    higher = int(np.count_nonzero(scores > s))
    tied_before = int(np.count_nonzero(scores[:true_source] == s))
    return 1 + higher + tied_before


def top_k_accuracy(cases: list[tuple[SourceDistribution, int]], k: int = 5) -> float:
    """Fraction of cases whose true source ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not cases:
        raise ValueError("empty case list")
    return float(np.mean([rank_of_source(d, s) <= k for d, s in cases]))


def error_distance(cases: list[tuple[SourceDistribution, int]], g: Graph) -> float:
    """Mean hop distance between the true source and the MAP estimate."""
    if not cases:
        raise ValueError("empty case list")
    dist_cache: dict[int, np.ndarray] = {}
    total = 0.0
    for d, s in cases:
        if s not in dist_cache:
            dist_cache[s] = shortest_path_lengths(g, s)
        total += float(dist_cache[s][d.map_estimate()])
    return total / len(cases)


def reciprocal_rank(cases: list[tuple[SourceDistribution, int]]) -> float:
    if not cases:
        raise ValueError("empty case list")
    return float(np.mean([1.0 / rank_of_source(d, s) for d, s in cases]))


def credible_set_size(dist: SourceDistribution, level: float = 0.9) -> int:
    """Nodes needed to accumulate at least `level` posterior mass."""
    if dist.kind != PROBABILISTIC:
        raise ValueError("credible sets require a probabilistic distribution")
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    ordered = dist.scores[dist.order()]
    cum = np.cumsum(ordered)
    return int(np.searchsorted(cum, level - _CUM_EPS) + 1)


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation suite's scores, with optional cross-run half-widths."""

    top_k_accuracy: float
    error_distance: float
    reciprocal_rank: float
    css90: float | None          # probabilistic methods only
    n_cases: int
    k: int = 5
    n_runs: int = 1
    ci_top_k: float | None = None
    ci_error_distance: float | None = None
    ci_reciprocal_rank: float | None = None
    ci_css90: float | None = None


def evaluate_suite(cases: list[tuple[SourceDistribution, int]], g: Graph,
                   k: int = 5, css_level: float = 0.9) -> MetricsReport:
    probabilistic = all(d.kind == PROBABILISTIC for d, _ in cases)
    css = (float(np.mean([credible_set_size(d, css_level) for d, _ in cases]))
           if probabilistic else None)
    return MetricsReport(
        top_k_accuracy=top_k_accuracy(cases, k),
        error_distance=error_distance(cases, g),
        reciprocal_rank=reciprocal_rank(cases),
        css90=css,
        n_cases=len(cases),
        k=k,
    )


def _t_halfwidth(values: list[float]) -> float:
    """95% t-interval half-width across runs."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[0] < 2:
        return float("nan")
    se = arr.std(ddof=1) / np.sqrt(arr.shape[0])
    return float(sps.t.ppf(0.975, arr.shape[0] - 1) * se)


def aggregate_runs(reports: list[MetricsReport]) -> MetricsReport:
    """Mean metrics with t-based 95% confidence half-widths across runs.

    With fewer than two runs the half-widths are reported as NaN (undefined).
    """
    if not reports:
        raise ValueError("no runs to aggregate")
    tops = [r.top_k_accuracy for r in reports]
    errs = [r.error_distance for r in reports]
    recs = [r.reciprocal_rank for r in reports]
    csss = [r.css90 for r in reports if r.css90 is not None]
    has_css = len(csss) == len(reports)
    return MetricsReport(
        top_k_accuracy=float(np.mean(tops)),
        error_distance=float(np.mean(errs)),
        reciprocal_rank=float(np.mean(recs)),
        css90=float(np.mean(csss)) if has_css else None,
        n_cases=sum(r.n_cases for r in reports),
        k=reports[0].k,
        n_runs=len(reports),
        ci_top_k=_t_halfwidth(tops),
        ci_error_distance=_t_halfwidth(errs),
        ci_reciprocal_rank=_t_halfwidth(recs),
        ci_css90=_t_halfwidth(csss) if has_css else None,
    )
