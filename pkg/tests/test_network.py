import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_network
from oracles import betweenness_bruteforce, betweenness_bruteforce_lengths, hits_power
from recipe_net.network import (
    ProductNetwork,
    betweenness,
    centrality_report,
    degrees,
    goods_classification_join,
    hits,
    induced_subgraph,
    largest_wcc,
    mean_out_degree_by_class,
    read_nodes,
    write_nodes,
)


def net_of(pairs, weights=None, nodes=None):
    df = pd.DataFrame(pairs, columns=["source_hs4", "target_hs4"])
    df["weight"] = weights if weights is not None else 1.0
    return ProductNetwork.from_edges(df, nodes=nodes)


def test_nodes_sorted_and_json_roundtrip(tmp_path):
    net = net_of([("0202", "0101"), ("0101", "0303")], [2.5, 3.0])
    assert net.nodes == ["0101", "0202", "0303"]
    net.metadata = {"weight_threshold": 2.0}
    net.to_json(tmp_path / "n.json")
    back = ProductNetwork.from_json(tmp_path / "n.json")
    assert back.nodes == net.nodes and back.metadata == net.metadata
    pd.testing.assert_frame_equal(back.edges(), net.edges())


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        net_of([("a", "b")], [-1.0])


def test_largest_wcc_sizes_and_ties():
    net = net_of([("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("x", "y"), ("y", "z")])
    assert largest_wcc(net).nodes == ["a", "b", "c", "d", "e"]
    tie = net_of([("m", "n"), ("b", "c")])
    assert largest_wcc(tie).nodes == ["b", "c"]
    full = net_of([("a", "b"), ("b", "a")])
    assert largest_wcc(full).nodes == full.nodes
    assert largest_wcc(largest_wcc(net)).nodes == largest_wcc(net).nodes


def test_empty_network_wcc():
    empty = ProductNetwork.from_edges(pd.DataFrame(columns=["source_hs4", "target_hs4", "weight"]))
    assert largest_wcc(empty).n == 0


def test_degree_examples():
    star = net_of([("h", f"l{k}") for k in range(4)], nodes=["h", "l0", "l1", "l2", "l3", "iso"])
    d = degrees(star).set_index("hs4")
    assert d.loc["h", "out_degree"] == 4 and d.loc["l2", "in_degree"] == 1
    assert tuple(d.loc["iso", ["in_degree", "out_degree"]]) == (0, 0)
    path = degrees(net_of([("a", "b"), ("b", "c")])).set_index("hs4")
    assert path.loc["b", "in_degree"] == 1 and path.loc["b", "out_degree"] == 1


def test_self_loops_not_counted():
    d = degrees(net_of([("a", "a"), ("a", "b")])).set_index("hs4")
    assert d.loc["a", "out_degree"] == 1 and d.loc["a", "in_degree"] == 0


def test_induced_subgraph():
    net = net_of([("a", "b"), ("b", "c")], [3.0, 4.0])
    assert induced_subgraph(net, net.nodes).edges().equals(net.edges())
    assert induced_subgraph(net, ["a", "c"]).n_edges == 0
    with pytest.raises(ValueError, match="zz"):
        induced_subgraph(net, ["a", "zz"])


def test_betweenness_examples():
    assert list(betweenness(net_of([("a", "b"), ("b", "c")]))) == [0.0, 1.0, 0.0]
    assert list(betweenness(net_of([("a", "b"), ("b", "c"), ("c", "a")]))) == [1.0, 1.0, 1.0]


@pytest.mark.parametrize("n", [2, 5, 20])
def test_betweenness_on_path(n):
    nodes = [f"{k:04d}" for k in range(n)]
    bc = betweenness(net_of(list(zip(nodes[:-1], nodes[1:]))))
    expect = [k * (n - 1 - k) for k in range(n)]
    assert list(bc) == expect


@pytest.mark.parametrize("seed", range(50))
def test_betweenness_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 51))
    m = int(rng.integers(n, min(300, n * (n - 1)) + 1))
    net = random_network(rng, n, m)
    adj = net.adjacency().toarray() > 0
    np.testing.assert_allclose(betweenness(net), betweenness_bruteforce(adj), rtol=0, atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_weighted_betweenness_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(5, 25))
    net = random_network(rng, n, int(rng.integers(n, 3 * n)))
    lengths = net.adjacency().toarray()
    lengths = np.where(lengths > 0, 1.0 / np.where(lengths > 0, lengths, 1.0), 0.0)
    np.testing.assert_allclose(betweenness(net, weighted=True), betweenness_bruteforce_lengths(lengths),
                               rtol=0, atol=1e-9)


def test_weighted_betweenness_with_equal_lengths_splits_paths():
    # two equally long routes a->b->d and a->c->d
    net = net_of([("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")], [2.0, 2.0, 2.0, 2.0])
    assert list(betweenness(net, weighted=True)) == [0.0, 0.5, 0.5, 0.0]


def test_hits_examples():
    h = hits(net_of([("p", "q"), ("r", "q")]))
    pos = {"p": 0, "q": 1, "r": 2}
    assert h.hub[pos["p"]] == h.hub[pos["r"]] == 0.5
    assert h.authority[pos["q"]] == 1.0 and h.authority.sum() == 1.0
    one = hits(net_of([("a", "b")]))
    assert one.hub[0] == 1.0 and one.authority[1] == 1.0


def test_hits_needs_edges():
    with pytest.raises(ValueError):
        hits(ProductNetwork.from_edges(pd.DataFrame({"source_hs4": ["a"], "target_hs4": ["a"], "weight": [1.0]})))


@pytest.mark.parametrize("seed", range(30))
def test_hits_matches_dense_power_iteration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 31))
    net = random_network(rng, n, int(rng.integers(2 * n, n * (n - 1) // 2 + 1)))
    h = hits(net)
    oh, oa = hits_power(net.adjacency().toarray())
    assert h.converged
    np.testing.assert_allclose(h.hub, oh, atol=1e-9)
    np.testing.assert_allclose(h.authority, oa, atol=1e-9)
    assert abs(h.hub.sum() - 1) < 1e-12 and abs(h.authority.sum() - 1) < 1e-12
    assert (h.hub >= 0).all() and (h.authority >= 0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_hits_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 15, 60)
    scaled = net_of(list(zip(net.edges().source_hs4, net.edges().target_hs4)), net.edges().weight * c,
                    nodes=net.nodes)
    a, b = hits(net), hits(scaled)
    np.testing.assert_allclose(a.hub, b.hub, atol=1e-10)
    np.testing.assert_allclose(a.authority, b.authority, atol=1e-10)


def test_goods_classes_and_report(tmp_path):
    net = net_of([("0101", "0202"), ("0202", "0303"), ("0101", "0303")], [3.0, 4.0, 5.0])
    table = tmp_path / "bec.csv"
    table.write_text("hs4,class\n0101,capital\n0202,Intermediate\n", encoding="utf-8")
    classes = goods_classification_join(net, table)
    assert classes == {"0101": "capital", "0202": "intermediate", "0303": "unclassified"}
    rep = centrality_report(net, classes=classes)
    summary = mean_out_degree_by_class(rep)
    assert summary.set_index("class").loc["capital", "mean_out_degree"] == 2.0
    write_nodes(rep, tmp_path / "nodes.csv")
    back = read_nodes(tmp_path / "nodes.csv")
    assert list(back.columns[:7]) == ["hs4", "in_degree", "out_degree", "betweenness", "hub", "authority", "class"]
    assert list(back["hs4"]) == ["0101", "0202", "0303"]
