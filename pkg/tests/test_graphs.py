import numpy as np
import pytest

from relex.graphs import (GraphFormatError, RelationalGraph, adjacency,
                          graph_from_adjacency, load_graph, make_graph,
                          normalize_edge, remove_edges, save_graph, split_nodes)


def path_graph(n=3, labels=None, classes=2):
    edges = [(i, i + 1) for i in range(n - 1)]
    return make_graph(n, edges, labels=labels or [i % classes for i in range(n)],
                      class_count=classes)


class TestLoadGraph:
    def test_edge_list_parse(self, tmp_path):
        (tmp_path / "g.edges").write_text("0 1\n1 2\n")
        (tmp_path / "g.labels").write_text("0\n1\n0\n")
        g = load_graph(tmp_path / "g.edges", format="edge-list")
        assert g.node_count == 3
        assert g.edges == {(0, 1), (1, 2)}
        assert g.class_count == 2

    def test_reversed_duplicate_edges_dedup(self, tmp_path):
        (tmp_path / "g.edges").write_text("0 1\n1 0\n0 1\n")
        (tmp_path / "g.labels").write_text("0\n0\n")
        g = load_graph(tmp_path / "g.edges", format="edge-list")
        assert g.edges == {(0, 1)}

    def test_self_loop_rejected_with_line_number(self, tmp_path):
        (tmp_path / "g.edges").write_text("0 1\n5 5\n")
        (tmp_path / "g.labels").write_text("0\n" * 6)
        with pytest.raises(GraphFormatError, match=":2"):
            load_graph(tmp_path / "g.edges", format="edge-list")

    def test_malformed_line_reports_lineno(self, tmp_path):
        (tmp_path / "g.edges").write_text("0 1\nbanana\n")
        (tmp_path / "g.labels").write_text("0\n0\n")
        with pytest.raises(GraphFormatError, match=":2"):
            load_graph(tmp_path / "g.edges", format="edge-list")

    def test_comments_and_blank_lines(self, tmp_path):
        (tmp_path / "g.edges").write_text("# header\n0 1  # inline\n\n1 2\n")
        (tmp_path / "g.labels").write_text("0\n1\n0\n")
        g = load_graph(tmp_path / "g.edges", format="edge-list")
        assert g.edges == {(0, 1), (1, 2)}

    def test_label_out_of_range_rejected(self, tmp_path):
        blob = '{"n": 2, "edges": [[0, 1]], "labels": [0, 7], "features": null, "classes": 2}'
        (tmp_path / "g.json").write_text(blob)
        with pytest.raises(GraphFormatError):
            load_graph(tmp_path / "g.json", format="json-bundle")

    def test_json_bundle_roundtrip(self, tmp_path):
        g = path_graph(4)
        save_graph(g, tmp_path / "g.json")
        g2 = load_graph(tmp_path / "g.json", format="json-bundle")
        assert g2.edges == g.edges
        assert g2.class_count == g.class_count
        np.testing.assert_array_equal(g2.labels, g.labels)
        np.testing.assert_allclose(g2.features, g.features)

    def test_missing_file(self, tmp_path):
        with pytest.raises(GraphFormatError, match="no such file"):
            load_graph(tmp_path / "absent.json")

    def test_features_companion_file(self, tmp_path):
        (tmp_path / "g.edges").write_text("0 1\n")
        (tmp_path / "g.labels").write_text("0\n1\n")
        (tmp_path / "g.features").write_text("1.5,2.0\n3.0,4.0\n")
        g = load_graph(tmp_path / "g.edges", format="edge-list")
        np.testing.assert_allclose(g.features, [[1.5, 2.0], [3.0, 4.0]])


class TestAdjacency:
    def test_empty_edge_set(self):
        g = make_graph(3, [])
        np.testing.assert_array_equal(adjacency(g), np.zeros((3, 3)))

    def test_single_edge(self):
        g = make_graph(2, [(0, 1)])
        np.testing.assert_array_equal(adjacency(g), [[0, 1], [1, 0]])

    def test_triangle_all_ones_off_diagonal(self):
        g = make_graph(3, [(0, 1), (1, 2), (0, 2)])
        a = adjacency(g)
        np.testing.assert_array_equal(a, np.ones((3, 3)) - np.eye(3))

    def test_symmetric_zero_diagonal(self):
        g = path_graph(6)
        a = adjacency(g)
        np.testing.assert_array_equal(a, a.T)
        assert a.trace() == 0


class TestGraphFromAdjacency:
    def test_round_trip_identity(self):
        g = path_graph(5)
        assert graph_from_adjacency(adjacency(g), g).edges == g.edges

    def test_symmetrize_by_union(self):
        g = make_graph(2, [])
        a = np.array([[0, 1], [0, 0]])
        assert graph_from_adjacency(a, g).edges == {(0, 1)}

    def test_diagonal_ignored(self):
        g = make_graph(2, [])
        a = np.eye(2, dtype=int)
        assert graph_from_adjacency(a, g).edges == set()

    def test_size_mismatch(self):
        g = path_graph(3)
        with pytest.raises(ValueError, match="does not match"):
            graph_from_adjacency(np.zeros((2, 2), dtype=int), g)

    def test_round_trip_random_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            a = (rng.random((n, n)) < 0.4).astype(np.int8)
            a = np.triu(a, k=1)
            a = a | a.T
            g = make_graph(n, [])
            rebuilt = graph_from_adjacency(a, g)
            np.testing.assert_array_equal(adjacency(rebuilt), a)


class TestRemoveEdges:
    def test_empty_victims(self):
        g = path_graph(4)
        g2, ignored = remove_edges(g, [])
        assert g2.edges == g.edges
        assert ignored == 0

    def test_triangle_minus_edge_is_path(self):
        g = make_graph(3, [(0, 1), (1, 2), (0, 2)])
        g2, ignored = remove_edges(g, [(0, 2)])
        assert g2.edges == {(0, 1), (1, 2)}
        assert ignored == 0

    def test_missing_victim_counted(self):
        g = path_graph(3)
        g2, ignored = remove_edges(g, [(0, 2)])
        assert g2.edges == g.edges
        assert ignored == 1

    def test_reversed_victim_matches(self):
        g = path_graph(3)
        g2, _ = remove_edges(g, [(1, 0)])
        assert g2.edges == {(1, 2)}

    def test_remove_all_edges(self):
        g = path_graph(5)
        g2, _ = remove_edges(g, g.edges)
        assert g2.edges == frozenset()
        assert g2.node_count == g.node_count


class TestInvariants:
    def test_self_loop_rejected(self):
        with pytest.raises(GraphFormatError):
            RelationalGraph(node_count=2, edges=frozenset({(1, 1)}),
                            features=np.ones((2, 1)), labels=np.zeros(2, dtype=int),
                            class_count=1)

    def test_out_of_range_edge(self):
        with pytest.raises(GraphFormatError):
            make_graph(2, [(0, 5)])

    def test_normalize_edge(self):
        assert normalize_edge(3, 1) == (1, 3)
        assert normalize_edge(1, 3) == (1, 3)

    def test_features_read_only(self):
        g = path_graph(3)
        with pytest.raises(ValueError):
            g.features[0, 0] = 99.0


class TestSplitNodes:
    def test_disjoint_and_stratified(self):
        g = make_graph(40, [], labels=[i % 4 for i in range(40)], class_count=4)
        split = split_nodes(g, seed=3)
        all_nodes = set(split.train) | set(split.validation) | set(split.test)
        assert len(split.train) + len(split.validation) + len(split.test) == 40
        assert all_nodes == set(range(40))
        for cls in range(4):
            train_cls = [n for n in split.train if g.labels[n] == cls]
            assert len(train_cls) >= 1

    def test_deterministic(self):
        g = make_graph(30, [], labels=[i % 3 for i in range(30)], class_count=3)
        assert split_nodes(g, 7) == split_nodes(g, 7)
        assert split_nodes(g, 7) != split_nodes(g, 8)
