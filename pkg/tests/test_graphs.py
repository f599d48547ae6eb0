import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_simple_graph, reach_by_matrix_power, reciprocal_positions
from segtran.graphs import (
    Graph,
    GraphFormatError,
    GraphValidationError,
    build_ba_dataset,
    from_edges,
    generate_ba,
    k_hop_reachability,
    load_dataset,
    load_graph,
    load_graphs,
    position_embedding,
    read_dataset_manifest,
    save_dataset,
    save_graph,
    save_graphs,
    select_anchors,
)


def test_graph_validation():
    with pytest.raises(GraphValidationError, match="symmetric"):
        Graph(np.array([[0, 1], [0, 0]]), np.zeros((2, 1)))
    with pytest.raises(GraphValidationError, match="self-loop"):
        Graph(np.eye(2), np.zeros((2, 1)))
    with pytest.raises(GraphValidationError, match="rows"):
        Graph(np.zeros((3, 3)), np.zeros((2, 1)))


# --- BA generation -----------------------------------------------------------------------


def test_ba_is_a_tree_and_reproducible():
    for n in (2, 5, 20, 40):
        g = generate_ba(n, np.random.default_rng(n))
        assert g.num_edges() == n - 1
        assert np.all(g.hops >= 0)
        np.testing.assert_array_equal(g.attributes, g.adjacency)
        again = generate_ba(n, np.random.default_rng(n))
        assert g.same_as(again)


def test_ba_attachment_is_degree_proportional():
    """Node 3 of a 4-node tree joins the hub of the star 0-1, 0-2 (or 1-0, 1-2)
    with probability 2/4; Monte Carlo over 20000 draws."""
    rng = np.random.default_rng(0)
    hub_hits = trials = 0
    for _ in range(20000):
        g = generate_ba(4, rng)
        deg = g.adjacency[:3, :3].sum(axis=1)
        partner = int(np.flatnonzero(g.adjacency[3])[0])
        hub_hits += deg[partner] == 2
        trials += 1
    # binomial sd is 0.0035 at p=0.5
    assert abs(hub_hits / trials - 0.5) < 0.015


def test_ba_third_node_uniform():
    rng = np.random.default_rng(1)
    counts = Counter(int(np.flatnonzero(generate_ba(3, rng).adjacency[2])[0]) for _ in range(10000))
    assert abs(counts[0] / 10000 - 0.5) < 0.02


def test_ba_rejects_tiny():
    with pytest.raises(ValueError):
        generate_ba(1, np.random.default_rng(0))


# --- reachability ----------------------------------------------------------------------


def test_reachability_matches_matrix_power_oracle():
    rng = np.random.default_rng(2)
    for trial in range(100):
        n = int(rng.integers(1, 31))
        a = random_simple_graph(rng, n, float(rng.uniform(0.02, 0.4)))
        g = Graph(a, np.zeros((n, 1)))
        for k in (1, 2, 3):
            np.testing.assert_array_equal(k_hop_reachability(g, k).adjacency, reach_by_matrix_power(a, k))


def test_reachability_examples():
    path = from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert sorted(k_hop_reachability(path, 2).edges()) == [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]
    star = from_edges(5, [(0, i) for i in range(1, 5)])
    two = k_hop_reachability(star, 2)
    assert two.num_edges() == 10
    np.testing.assert_array_equal(two.attributes, star.attributes)


def test_reachability_superset_and_monotone():
    ds = build_ba_dataset({"paired_train": 30, "paired_test": 10}, n_nodes=25, seed=3)
    for ex in ds.paired_train + ds.paired_test:
        assert ex.target.num_edges() >= ex.source.num_edges()
        assert np.all(ex.target.adjacency >= ex.source.adjacency)
        three = k_hop_reachability(ex.source, 3)
        assert np.all(three.adjacency >= ex.target.adjacency)


# --- anchors and positions ------------------------------------------------------------


def test_anchor_padding_rules():
    rng = np.random.default_rng(0)
    g8 = generate_ba(8, rng)
    assert sorted(select_anchors(g8, 8, rng)) == list(range(8))
    g5 = generate_ba(5, rng)
    a = select_anchors(g5, 8, rng)
    assert len(set(a[:5])) == 5 and a[5:] == [a[4]] * 3


def test_anchor_selection_is_uniform():
    rng = np.random.default_rng(4)
    g = generate_ba(40, rng)
    counts = np.zeros(40)
    for _ in range(10000):
        counts[select_anchors(g, 8, rng)] += 1
    np.testing.assert_allclose(counts / 10000, 0.2, atol=0.02)


def test_position_embedding_path_example():
    g = from_edges(4, [(0, 1), (1, 2), (2, 3)])
    np.testing.assert_array_equal(position_embedding(g, [0]).values[:, 0], [1, 1 / 2, 1 / 3, 1 / 4])


def test_position_embedding_matches_floyd_warshall():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        a = random_simple_graph(rng, n, float(rng.uniform(0.03, 0.3)))
        g = Graph(a, np.zeros((n, 1)))
        anchors = select_anchors(g, 8, rng)
        np.testing.assert_array_equal(position_embedding(g, anchors).values, reciprocal_positions(a, anchors))


def test_position_embedding_unreachable_and_raw():
    g = from_edges(3, [(0, 1)])
    np.testing.assert_array_equal(position_embedding(g, [0]).values[:, 0], [1.0, 0.5, 0.0])
    np.testing.assert_array_equal(position_embedding(g, [0], "raw").values[:, 0], [0.0, 1.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.integers(0, 2**32 - 1))
def test_position_embedding_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    a = random_simple_graph(rng, n, 0.3)
    g = Graph(a, np.zeros((n, 1)))
    anchors = select_anchors(g, 4, rng)
    perm = rng.permutation(n)  # new index i holds old node perm[i]
    inv = np.argsort(perm)
    gp = Graph(a[np.ix_(perm, perm)], np.zeros((n, 1)))
    pe = position_embedding(g, anchors).values
    pe_p = position_embedding(gp, [int(inv[x]) for x in anchors]).values
    np.testing.assert_array_equal(pe_p, pe[perm])
    assert np.all((pe >= 0) & (pe <= 1))
    for j, v in enumerate(anchors):
        assert set(np.flatnonzero(pe[:, j] == 1.0)) == {v}


# --- datasets and files -----------------------------------------------------------------


def test_dataset_counts_and_determinism():
    counts = {"paired_train": 2, "unpaired_source": 1, "unpaired_target": 1, "paired_test": 1}
    ds = build_ba_dataset(counts, n_nodes=6, seed=9)
    assert ds.counts() == counts
    again = build_ba_dataset(counts, n_nodes=6, seed=9)
    assert all(a.source.same_as(b.source) for a, b in zip(ds.paired_train, again.paired_train))
    # unpaired targets are 2-hop graphs: denser than the trees they came from
    assert ds.unpaired_target[0].num_edges() >= 5


def test_partitions_grow_by_prefix():
    small = build_ba_dataset({"unpaired_source": 3}, n_nodes=10, seed=1)
    big = build_ba_dataset({"unpaired_source": 6}, n_nodes=10, seed=1)
    assert all(a.same_as(b) for a, b in zip(small.unpaired_source, big.unpaired_source))


def test_graph_file_round_trip(tmp_path):
    tri = from_edges(3, [(0, 1), (1, 2), (0, 2)])
    save_graph(tri, tmp_path / "g.json")
    assert load_graph(tmp_path / "g.json").same_as(tri)
    empty = from_edges(3, [])
    save_graphs([tri, empty], tmp_path / "many.json")
    back = load_graphs(tmp_path / "many.json")
    assert back[1].num_edges() == 0 and back[0].same_as(tri)


def test_graph_file_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"n": 4, "edges": [[2, 5]], "attributes": [[0]] * 4}))
    with pytest.raises(GraphValidationError, match="out of range"):
        load_graph(p)
    p.write_text('{"n": 2,\n "edges": [}')
    with pytest.raises(GraphFormatError, match="line 2"):
        load_graph(p)
    p.write_text(json.dumps({"n": 2, "edges": [[0, 1]]}))
    with pytest.raises(GraphFormatError, match="attributes"):
        load_graph(p)
    p.write_text(json.dumps({"n": 2, "edges": [[0, 1.5]], "attributes": [[0], [0]]}))
    with pytest.raises(GraphFormatError, match="edges\\[0\\]"):
        load_graph(p)


def test_dataset_directory_round_trip(tmp_path):
    ds = build_ba_dataset({"paired_train": 3, "unpaired_source": 2, "unpaired_target": 2, "paired_test": 2},
                          n_nodes=7, seed=2)
    save_dataset(ds, tmp_path, {"n_nodes": 7, "seed": 2})
    back = load_dataset(tmp_path)
    assert back.counts() == ds.counts()
    assert read_dataset_manifest(tmp_path)["seed"] == 2
    for a, b in zip(ds.paired_train, back.paired_train):
        assert a.source.same_as(b.source) and a.target.same_as(b.target)
