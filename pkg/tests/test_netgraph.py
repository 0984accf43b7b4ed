"""Topology layer: parsing, traversal, centralities, statistics."""

import itertools

import numpy as np
import pytest

from episource import netgraph
from episource.netgraph import (GraphParseError, GraphValidationError,
                                all_pairs_distances, betweenness_centrality,
                                clustering_coefficient, closeness_centrality,
                                from_edges, graph_stats, induced_subgraph,
                                jordan_center, load_edge_list,
                                node_feature_augmentation,
                                shortest_path_lengths)
from conftest import random_connected_graph


class TestLoadEdgeList:
    def test_path_graph(self):
        g = load_edge_list("0 1\n1 2")
        assert (g.n, g.edge_count) == (3, 2)

    def test_duplicate_undirected_edge_collapses(self):
        g = load_edge_list("a b\nb a")
        assert (g.n, g.edge_count) == (2, 1)

    def test_karate_counts(self, karate):
        assert (karate.n, karate.edge_count) == (34, 77)

    def test_comments_and_weights(self):
        g = load_edge_list("# header\na b 2.5\nb c  # trailing\n")
        assert g.edge_count == 2
        assert g.is_weighted()

    def test_malformed_line_reports_number(self):
        with pytest.raises(GraphParseError, match="line 2"):
            load_edge_list("a b\na b c d")

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(GraphValidationError, match="positive"):
            load_edge_list("a b 0")
        with pytest.raises(GraphValidationError):
            load_edge_list("a b -1")

    def test_zero_nodes_rejected(self):
        with pytest.raises(GraphValidationError, match="zero nodes"):
            load_edge_list("# nothing here\n")

    def test_self_loop_rejected(self):
        with pytest.raises(GraphValidationError, match="self-loop"):
            load_edge_list("a a")

    def test_disconnected_rejected_at_load(self):
        with pytest.raises(GraphValidationError, match="2 components"):
            load_edge_list("a b\nc d")

    def test_label_order_is_first_appearance(self):
        g = load_edge_list("z y\ny x")
        assert g.labels == ("z", "y", "x")

    def test_degree_sum_is_twice_edges(self, karate):
        assert karate.degrees().sum() == 2 * karate.edge_count


class TestShortestPaths:
    def test_path_from_end(self, path3):
        assert shortest_path_lengths(path3, 0).tolist() == [0, 1, 2]

    def test_star_center(self, star4):
        assert shortest_path_lengths(star4, 0).tolist() == [0, 1, 1, 1]

    def test_karate_diameter(self, karate):
        assert all_pairs_distances(karate).max() == 5

    def test_invalid_node(self, path3):
        with pytest.raises(GraphValidationError):
            shortest_path_lengths(path3, 7)

    def test_unreachable_is_inf(self):
        g, _ = induced_subgraph(load_edge_list("a b\nb c"), [0, 2])
        assert shortest_path_lengths(g, 0)[1] == np.inf


def brute_force_betweenness(g: netgraph.Graph) -> np.ndarray:
    """Exhaustive shortest-path enumeration; the independent oracle."""
    dists = all_pairs_distances(g)
    score = np.zeros(g.n)
    for s, t in itertools.combinations(range(g.n), 2):
        if not np.isfinite(dists[s][t]):
            continue
        paths = []
        stack = [(s, [s])]
        while stack:
            v, path = stack.pop()
            if v == t:
                paths.append(path)
                continue
            for u in g.neighbors(v):
                u = int(u)
                if dists[s][u] == len(path) and dists[u][t] == dists[s][t] - len(path):
                    stack.append((u, path + [u]))
        for path in paths:
            for v in path[1:-1]:
                score[v] += 1.0 / len(paths)
    return score


class TestBetweenness:
    def test_path_midpoint(self, path3):
        assert betweenness_centrality(path3).tolist() == [0.0, 1.0, 0.0]

    def test_star_center_scores_three(self, star4):
        bc = betweenness_centrality(star4)
        assert bc[0] == 3.0
        assert bc[1:].tolist() == [0.0, 0.0, 0.0]

    def test_five_cycle_symmetric(self):
        g = load_edge_list("0 1\n1 2\n2 3\n3 4\n4 0")
        bc = betweenness_centrality(g)
        assert np.allclose(bc, bc[0])

    def test_matches_enumeration_on_small_graphs(self):
        rng = np.random.default_rng(7)
        for trial in range(40):
            n = int(rng.integers(3, 8))
            g = random_connected_graph(rng, n, int(rng.integers(0, 6)))
            assert np.allclose(betweenness_centrality(g),
                               brute_force_betweenness(g), atol=1e-9), \
                f"Brandes mismatch on trial {trial}"


class TestClustering:
    def test_triangle_node(self):
        g = load_edge_list("a b\nb c\nc a")
        assert clustering_coefficient(g, 0) == 1.0

    def test_path_midpoint_zero(self, path3):
        assert clustering_coefficient(path3, 1) == 0.0

    def test_leaf_zero(self, path3):
        assert clustering_coefficient(path3, 0) == 0.0

    def test_karate_average(self, karate):
        avg = np.mean([clustering_coefficient(karate, v) for v in range(karate.n)])
        assert abs(avg - 0.54) <= 0.01


class TestGraphStats:
    def test_triangle(self):
        s = graph_stats(load_edge_list("a b\nb c\nc a"))
        assert (s.avg_degree, s.avg_shortest_path, s.diameter, s.avg_clustering) \
            == (2.0, 1.0, 1, 1.0)

    def test_karate_table_values(self, karate):
        s = graph_stats(karate)
        assert abs(s.avg_degree - 4.53) <= 0.01
        assert abs(s.avg_shortest_path - 2.42) <= 0.01
        assert s.diameter == 5

    def test_dolphin_table_values(self, dolphin):
        s = graph_stats(dolphin)
        assert abs(s.avg_shortest_path - 3.36) <= 0.01
        assert s.diameter == 8

    def test_disconnected_reports_components(self):
        g = from_edges([(0, 1), (2, 3)])
        with pytest.raises(GraphValidationError, match="2 components"):
            graph_stats(g)

    def test_json_keys(self, path3):
        import json
        d = json.loads(graph_stats(path3).to_json())
        assert set(d) == {"n_nodes", "n_edges", "avg_degree",
                          "avg_shortest_path", "diameter", "avg_clustering"}


class TestInducedSubgraph:
    def test_full_set_is_copy(self, karate):
        sub, idx = induced_subgraph(karate, range(karate.n))
        assert sub.n == karate.n and sub.edge_count == karate.edge_count
        assert idx.tolist() == list(range(karate.n))

    def test_two_nonadjacent_nodes(self, path3):
        sub, idx = induced_subgraph(path3, [0, 2])
        assert (sub.n, sub.edge_count) == (2, 0)
        assert idx.tolist() == [0, 2]

    def test_karate_first_four_nodes(self, karate):
        # direct scan of the shipped edge list counts 6 edges among {0,1,2,3}
        sub, _ = induced_subgraph(karate, [0, 1, 2, 3])
        assert sub.edge_count == 6

    def test_labels_carry_over(self):
        g = load_edge_list("a b\nb c")
        sub, _ = induced_subgraph(g, [1, 2])
        assert sub.labels == ("b", "c")

    def test_empty_set_rejected(self, path3):
        with pytest.raises(GraphValidationError):
            induced_subgraph(path3, [])


class TestJordanCenter:
    def test_path_center(self, path3):
        assert jordan_center(path3) == {1}

    def test_even_path_tie(self):
        g = load_edge_list("0 1\n1 2\n2 3")
        assert jordan_center(g) == {1, 2}

    def test_six_cycle_all_nodes(self):
        g = load_edge_list("0 1\n1 2\n2 3\n3 4\n4 5\n5 0")
        assert jordan_center(g) == set(range(6))

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(4, 9))
            g = random_connected_graph(rng, n, int(rng.integers(0, 5)))
            perm = rng.permutation(n)
            remapped = [(int(perm[u]), int(perm[v]), w) for u, v, w in g.edges()]
            h = from_edges(remapped)
            expected = {int(perm[v]) for v in jordan_center(g)}
            assert jordan_center(h) == expected

    def test_disconnected_rejected(self):
        g = from_edges([(0, 1), (2, 3)])
        with pytest.raises(GraphValidationError, match="largest connected component"):
            jordan_center(g)


class TestFeatureAugmentation:
    def test_star_degree_column(self, star4):
        feats = node_feature_augmentation(star4)
        assert feats.shape == (4, 4)
        assert feats[0, 0] == 1.0
        assert np.all(feats[1:, 0] == 0.0)

    def test_regular_graph_constant_column_is_zero(self):
        g = load_edge_list("0 1\n1 2\n2 3\n3 0")  # 4-cycle, 2-regular
        feats = node_feature_augmentation(g)
        assert np.all(feats[:, 0] == 0.0)

    def test_path_closeness_peaks_at_center(self, path3):
        closeness = closeness_centrality(path3)
        assert np.allclose(closeness, [2 / 3, 1.0, 2 / 3])
        feats = node_feature_augmentation(path3)
        assert feats[1, 2] == 1.0 and feats[0, 2] == 0.0

    def test_range(self, karate):
        feats = node_feature_augmentation(karate)
        assert feats.min() >= 0.0 and feats.max() <= 1.0


class TestHashing:
    def test_content_hash_ignores_labels(self):
        a = load_edge_list("x y\ny z")
        b = load_edge_list("p q\nq r")
        assert a.content_hash() == b.content_hash()

    def test_content_hash_sees_weights(self):
        a = load_edge_list("x y 1.0")
        b = load_edge_list("x y 2.0")
        assert a.content_hash() != b.content_hash()
