"""Graph container, loaders, generator, and split logic."""

import numpy as np
import pytest

from conftest import graph_from_pairs
from topoprompt.errors import ConfigError, DataError
from topoprompt.graphs import (
    Graph,
    SplitSpec,
    disjoint_union,
    generate_sbm,
    load_edge_list,
    load_split,
    make_split,
    save_edge_list,
    save_split,
)


class TestCanonicalization:
    def test_self_loops_and_duplicates_dropped(self):
        g = graph_from_pairs(4, [(0, 1), (1, 0), (2, 2), (1, 2), (1, 2), (3, 1)])
        assert g.num_edges == 3
        assert g.edge_array().tolist() == [[0, 1], [1, 2], [1, 3]]

    def test_adjacency_row_lengths_sum_to_twice_edges(self, corpus):
        for g in corpus:
            assert int(np.diff(g.indptr).sum()) == 2 * g.num_edges

    def test_neighbors_sorted_and_symmetric(self):
        g = graph_from_pairs(5, [(3, 1), (0, 4), (4, 2), (1, 0)])
        for i in range(5):
            nbrs = g.neighbors(i)
            assert list(nbrs) == sorted(nbrs)
            for j in nbrs:
                assert i in g.neighbors(j)

    def test_degrees_match_neighbor_counts(self, fixture_graphs):
        for g in fixture_graphs.values():
            expect = [len(g.neighbors(i)) for i in range(g.num_nodes)]
            assert g.degrees.tolist() == expect


class TestEdgeListIO:
    def test_round_trip_byte_identical(self, tmp_path, corpus):
        path = tmp_path / "g.edges"
        g = corpus[3]
        save_edge_list(path, g)
        first = path.read_bytes()
        save_edge_list(path, load_edge_list(path, num_nodes=g.num_nodes))
        assert path.read_bytes() == first

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "g.edges"
        path.write_text("# header\n0 1\n\n1 2  # trailing\n")
        g = load_edge_list(path, num_nodes=3)
        assert g.num_edges == 2

    def test_arbitrary_ids_remapped_sorted(self, tmp_path):
        path = tmp_path / "g.edges"
        path.write_text("100 7\n7 42\n")
        g = load_edge_list(path)
        assert g.num_nodes == 3
        assert g.original_ids.tolist() == [7, 42, 100]
        assert g.edge_array().tolist() == [[0, 1], [0, 2]]

    def test_malformed_lines_error(self, tmp_path):
        for body in ["0\n", "0 1 2\n", "a b\n", "-1 2\n"]:
            path = tmp_path / "bad.edges"
            path.write_text(body)
            with pytest.raises(DataError):
                load_edge_list(path)

    def test_empty_without_count_errors(self, tmp_path):
        path = tmp_path / "empty.edges"
        path.write_text("# nothing\n")
        with pytest.raises(DataError):
            load_edge_list(path)
        assert load_edge_list(path, num_nodes=4).num_nodes == 4

    def test_id_beyond_count_errors(self, tmp_path):
        path = tmp_path / "g.edges"
        path.write_text("0 9\n")
        with pytest.raises(DataError):
            load_edge_list(path, num_nodes=5)


class TestGenerator:
    def test_p_one_gives_clique_p_zero_gives_empty(self):
        full = generate_sbm([6], 1.0, 0.0, seed=0)
        assert full.num_edges == 15
        empty = generate_sbm([4, 4], 0.0, 0.0, seed=0)
        assert empty.num_edges == 0

    def test_labels_one_hot_by_block(self):
        g = generate_sbm([3, 5], 1.0, 1.0, seed=1)
        assert g.labels.shape == (8, 2)
        assert g.labels.sum(axis=1).tolist() == [1] * 8
        assert g.labels[:, 0].tolist() == [1, 1, 1, 0, 0, 0, 0, 0]

    def test_same_seed_same_graph(self):
        a = generate_sbm([20, 20], 0.2, 0.05, seed=9)
        b = generate_sbm([20, 20], 0.2, 0.05, seed=9)
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != generate_sbm([20, 20], 0.2, 0.05, seed=10).content_hash()

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            generate_sbm([5], 0.1, 0.5, seed=0)
        with pytest.raises(ConfigError):
            generate_sbm([0, 5], 0.5, 0.1, seed=0)


class TestSplits:
    def test_random_split_counts(self):
        g = generate_sbm([50], 0.1, 0.0, seed=3)
        split = make_split(g, SplitSpec(mode="random", fractions=(0.6, 0.2, 0.2)), seed=42)
        counts = np.bincount(split, minlength=3)
        assert counts.tolist() == [30, 10, 10]

    def test_random_split_leftover_goes_train_first(self):
        g = generate_sbm([7], 0.5, 0.0, seed=3)
        split = make_split(g, SplitSpec(mode="random", fractions=(0.5, 0.25, 0.25)), seed=0)
        counts = np.bincount(split, minlength=3)
        # floors are 3,1,1; two leftovers land on train then valid
        assert counts.tolist() == [4, 2, 1]

    def test_by_class_test_labels_never_in_train(self):
        g = generate_sbm([10, 10, 10], 1.0, 1.0, seed=5)
        split = make_split(
            g, SplitSpec(mode="by_class", class_partition=([0], [1], [2]))
        )
        train_classes = set(np.flatnonzero(g.labels[split == 0].any(axis=0)))
        assert train_classes.isdisjoint({2})
        assert (split[20:] == 2).all()

    def test_by_class_overlap_rejected(self):
        g = generate_sbm([5, 5], 1.0, 1.0, seed=5)
        with pytest.raises(ConfigError):
            make_split(g, SplitSpec(mode="by_class", class_partition=([0], [0], [1])))

    def test_provided_split_round_trip(self, tmp_path):
        path = tmp_path / "s.split.txt"
        split = np.array([0, 2, 1, 0], dtype=np.int8)
        save_split(path, split)
        assert load_split(path).tolist() == split.tolist()
        g = generate_sbm([4], 0.5, 0.0, seed=0)
        assert make_split(g, SplitSpec(mode="provided", path=str(path))).tolist() == split.tolist()

    def test_provided_split_length_checked(self, tmp_path):
        path = tmp_path / "s.split.txt"
        save_split(path, np.array([0, 1], dtype=np.int8))
        g = generate_sbm([4], 0.5, 0.0, seed=0)
        with pytest.raises(DataError):
            make_split(g, SplitSpec(mode="provided", path=str(path)))

    def test_bad_fractions_rejected(self):
        g = generate_sbm([4], 0.5, 0.0, seed=0)
        with pytest.raises(ConfigError):
            make_split(g, SplitSpec(mode="random", fractions=(0.9, 0.2, 0.2)))


class TestUnionAndAggregation:
    def test_disjoint_union_offsets(self):
        a = graph_from_pairs(3, [(0, 1)])
        b = graph_from_pairs(2, [(0, 1)])
        merged, offsets = disjoint_union([a, b])
        assert list(offsets) == [0, 3]
        assert merged.num_nodes == 5
        assert merged.edge_array().tolist() == [[0, 1], [3, 4]]

    def test_mean_aggregator_rows(self, fixture_graphs):
        g = fixture_graphs["two_components"]
        m = g.mean_aggregator()
        rows = np.asarray(m.sum(axis=1)).ravel()
        deg = g.degrees
        np.testing.assert_allclose(rows[deg > 0], 1.0, atol=1e-12)
        assert (rows[deg == 0] == 0).all()

    def test_content_hash_ignores_input_edge_order(self):
        a = graph_from_pairs(4, [(0, 1), (2, 3), (1, 2)])
        b = graph_from_pairs(4, [(2, 1), (1, 0), (3, 2)])
        assert a.content_hash() == b.content_hash()
