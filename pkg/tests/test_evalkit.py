"""Metrics: ranks, accuracies, credible sets, and cross-run intervals."""

import math

import numpy as np
import pytest

from episource.estimators import PROBABILISTIC, RANKING, SourceDistribution
from episource.evalkit import (MetricsReport, aggregate_runs,
                               credible_set_size, error_distance,
                               evaluate_suite, rank_of_source,
                               reciprocal_rank, top_k_accuracy)
from episource.netgraph import load_edge_list


def prob_dist(values):
    v = np.asarray(values, dtype=np.float64)
    return SourceDistribution(kind=PROBABILISTIC, scores=v / v.sum())


def rank_dist(values):
    return SourceDistribution(kind=RANKING, scores=np.asarray(values, dtype=np.float64))


class TestRankOfSource:
    def test_certain_mass_is_rank_one(self):
        assert rank_of_source(prob_dist([0, 0, 1]), 2) == 1

    def test_uniform_tie_breaks_by_index(self):
        d = prob_dist([1, 1, 1, 1])
        assert rank_of_source(d, 2) == 3

    def test_hand_sorted_five_nodes(self):
        d = prob_dist([0.10, 0.35, 0.05, 0.30, 0.20])
        # manual sort: 1 (0.35), 3 (0.30), 4 (0.20), 0 (0.10), 2 (0.05)
        assert [rank_of_source(d, v) for v in range(5)] == [4, 1, 5, 2, 3]

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            scores = rng.normal(size=8)
            a = rank_dist(scores)
            b = rank_dist(np.exp(2.0 * scores) + 5)
            for v in range(8):
                assert rank_of_source(a, v) == rank_of_source(b, v)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            rank_of_source(prob_dist([1, 1]), 2)


class TestTopK:
    def test_all_rank_one(self):
        cases = [(prob_dist([0, 1, 0]), 1)] * 4
        assert top_k_accuracy(cases, k=1) == 1.0

    def test_k_window(self):
        d = prob_dist([0.4, 0.3, 0.2, 0.1])
        cases = [(d, 0), (d, 1), (d, 3)]
        assert top_k_accuracy(cases, k=2) == pytest.approx(2 / 3)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            top_k_accuracy([], k=5)
        with pytest.raises(ValueError):
            top_k_accuracy([(prob_dist([1]), 0)], k=0)


class TestErrorDistance:
    def test_perfect_map_zero(self, path3):
        cases = [(prob_dist([1, 0, 0]), 0), (prob_dist([0, 0, 1]), 2)]
        assert error_distance(cases, path3) == 0.0

    def test_adjacent_miss_is_one(self, path3):
        cases = [(prob_dist([0, 1, 0]), 0)]
        assert error_distance(cases, path3) == 1.0

    def test_mixed_mean(self, path3):
        cases = [(prob_dist([0, 0, 1]), 0),   # distance 2
                 (prob_dist([1, 0, 0]), 0)]   # distance 0
        assert error_distance(cases, path3) == 1.0

    def test_zero_iff_map_accuracy_one(self, path3):
        rng = np.random.default_rng(1)
        for _ in range(30):
            cases = []
            for _ in range(10):
                scores = rng.dirichlet(np.ones(3))
                cases.append((prob_dist(scores), int(rng.integers(3))))
            map_hits = all(d.map_estimate() == s for d, s in cases)
            assert (error_distance(cases, path3) == 0.0) == map_hits


class TestReciprocalRank:
    def test_bounds_and_consistency(self):
        d = prob_dist([0.5, 0.3, 0.2])
        cases = [(d, 0), (d, 2)]
        rr = reciprocal_rank(cases)
        assert rr == pytest.approx((1.0 + 1 / 3) / 2)
        assert rr >= top_k_accuracy(cases, k=1) / 1.0


class TestCredibleSetSize:
    def test_point_mass(self):
        assert credible_set_size(prob_dist([0, 1, 0])) == 1

    def test_uniform_ten_needs_nine(self):
        assert credible_set_size(prob_dist([1] * 10), level=0.9) == 9

    def test_antitone_in_level(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            d = prob_dist(rng.dirichlet(np.ones(12)))
            assert credible_set_size(d, 0.5) <= credible_set_size(d, 0.9)

    def test_rank_scores_rejected(self):
        with pytest.raises(ValueError):
            credible_set_size(rank_dist([3, 2, 1]))


class TestSuiteAndAggregation:
    def test_suite_report_fields(self, path3):
        cases = [(prob_dist([0.7, 0.2, 0.1]), 0), (prob_dist([0.1, 0.8, 0.1]), 2)]
        r = evaluate_suite(cases, path3, k=1)
        assert r.top_k_accuracy == 0.5
        assert r.css90 is not None
        assert r.n_cases == 2

    def test_ranking_suite_has_no_css(self, path3):
        cases = [(rank_dist([3, 2, 1]), 0)]
        assert evaluate_suite(cases, path3).css90 is None

    def test_identical_runs_zero_halfwidth(self):
        r = MetricsReport(top_k_accuracy=0.5, error_distance=1.0,
                          reciprocal_rank=0.4, css90=3.0, n_cases=10)
        agg = aggregate_runs([r, r, r])
        assert agg.ci_top_k == 0.0
        assert agg.n_runs == 3

    def test_t_interval_closed_form(self):
        reports = [MetricsReport(top_k_accuracy=v, error_distance=0.0,
                                 reciprocal_rank=0.5, css90=None, n_cases=1)
                   for v in (0.70, 0.73, 0.76)]
        agg = aggregate_runs(reports)
        assert agg.top_k_accuracy == pytest.approx(0.73)
        assert agg.ci_top_k == pytest.approx(0.07452413135158643, rel=1e-9)

    def test_single_run_undefined_ci(self):
        r = MetricsReport(top_k_accuracy=0.5, error_distance=1.0,
                          reciprocal_rank=0.4, css90=None, n_cases=10)
        agg = aggregate_runs([r])
        assert math.isnan(agg.ci_top_k)

    def test_metric_order_invariants_on_random_suites(self, karate):
        rng = np.random.default_rng(3)
        for _ in range(10):
            cases = []
            for _ in range(40):
                d = prob_dist(rng.dirichlet(np.ones(karate.n)))
                cases.append((d, int(rng.integers(karate.n))))
            top1 = top_k_accuracy(cases, k=1)
            top5 = top_k_accuracy(cases, k=5)
            rr = reciprocal_rank(cases)
            assert top1 <= top5 <= 1.0
            assert rr >= top1
