import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import spearman_oracle
from recipe_net.trade import (
    TradeMatrix,
    compute_complexity,
    country_mean_hub,
    hub_complexity_correlations,
    load_complexity,
    load_trade_matrix,
    presence_matrix,
    rca,
    rpop,
    spearman,
    top_bc_export_share,
    top_k_products,
    write_matrix,
)

E = pd.DataFrame([[1.0, 1.0], [2.0, 0.0], [1.0, 3.0]], index=["AAA", "BBB", "CCC"], columns=["0101", "0202"])
POP = pd.Series([1.0, 2.0, 1.0], index=E.index)


def test_rca_toy_exact():
    assert rca(E).to_numpy().tolist() == [[1.0, 1.0], [2.0, 0.0], [0.5, 1.5]]


def test_rpop_toy_exact():
    assert rpop(E, POP).to_numpy().tolist() == [[1.0, 1.0], [1.0, 0.0], [1.0, 3.0]]


def test_rpop_formula_example():
    # E_pc = 100, pop_c = 10, world exports 1000, world population 1000
    e = np.array([[100.0], [900.0]])
    assert rpop(e, [10.0, 990.0])[0, 0] == 10.0


def test_rca_edge_cases():
    assert rca(np.array([[7.0]]))[0, 0] == 1.0
    # half of world exports of p, half of world total exports
    assert rca(np.array([[5.0, 5.0], [5.0, 5.0]]))[0, 0] == 1.0
    out = rca(np.array([[0.0, 0.0], [1.0, 2.0]]))
    assert out[0].tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        rca(np.zeros((2, 2)))


def test_rpop_edge_cases():
    assert rpop(np.array([[0.0], [3.0]]), [1.0, 1.0])[0, 0] == 0.0
    with pytest.raises(ValueError):
        rpop(np.ones((2, 1)), [1.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(
    arrays(float, (4, 5), elements=st.integers(0, 10**6).map(float)),
    arrays(float, 4, elements=st.integers(1, 10**9).map(float)),
    st.sampled_from([0.5, 2.0, 8.0, 1024.0]),
)
def test_scale_invariance(e, pop, c):
    if e.sum() == 0:
        return
    np.testing.assert_array_equal(rca(e * c), rca(e))
    np.testing.assert_array_equal(rpop(e * c, pop), rpop(e, pop))
    np.testing.assert_array_equal(rpop(e, pop * c), rpop(e, pop))


def test_presence_threshold():
    m = pd.DataFrame([[10.0, 0.5, 1.0]])
    assert presence_matrix(m).to_numpy().tolist() == [[1, 0, 1]]
    with pytest.raises(ValueError):
        presence_matrix(m, 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 6), elements=st.floats(0, 10)), st.floats(0.1, 5), st.floats(0.1, 5))
def test_presence_monotone(m, t1, t2):
    lo, hi = sorted((t1, t2))
    assert (presence_matrix(m, hi) <= presence_matrix(m, lo)).all()


def test_spearman_examples():
    x = np.arange(10.0)
    assert spearman(x, np.exp(x)) == 1.0
    assert spearman(x, x[::-1]) == -1.0
    with pytest.raises(ValueError):
        spearman([1, 2], [2, 1])


@pytest.mark.parametrize("seed", range(20))
def test_spearman_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 8, size=20).astype(float)
    y = rng.normal(size=20)
    assert abs(spearman(x, y) - spearman_oracle(x, y)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.integers(3, 30), elements=st.floats(-1e6, 1e6)))
def test_spearman_self_is_one(x):
    if np.unique(x).size < 2:
        return
    assert spearman(x, x) == 1.0


def nodes_frame(bc):
    return pd.DataFrame({"hs4": list(bc), "betweenness": list(bc.values())})


def test_top_bc_export_share():
    nodes = nodes_frame({"0101": 5.0, "0202": 3.0, "0303": 3.0, "0404": 1.0})
    assert top_k_products(nodes, k=3) == ["0101", "0202", "0303"]
    r = pd.DataFrame([[2.0, 2.0, 2.0, 0.0], [0.0, 0.0, 0.0, 5.0], [2.0, 0.5, 0.0, 0.0]],
                     index=["A", "B", "C"], columns=["0101", "0202", "0303", "0404"])
    share = top_bc_export_share(nodes, r, k=3)
    assert share.tolist() == [1.0, 0.0, 1 / 3]
    with pytest.raises(ValueError):
        top_bc_export_share(nodes, r, k=5)


def test_country_mean_hub():
    hub = pd.Series({"0101": 0.5, "0202": 0.3, "0303": 0.2})
    r = pd.DataFrame([[2.0, 0.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.0, 0.0]], index=["A", "B", "C"],
                     columns=list(hub.index))
    out = country_mean_hub(r, hub)
    assert out["A"] == 0.5 and out["B"] == pytest.approx(0.4) and np.isnan(out["C"])
    uniform = country_mean_hub(r.iloc[:2], pd.Series(0.25, index=hub.index))
    assert (uniform == 0.25).all()


def test_country_mean_hub_five_country_oracle():
    rng = np.random.default_rng(0)
    prods = [f"{1000 + k}" for k in range(8)]
    r = pd.DataFrame(rng.uniform(0, 2, size=(5, 8)), index=list("ABCDE"), columns=prods)
    hub = pd.Series(rng.random(8), index=prods)
    got = country_mean_hub(r, hub)
    for c in r.index:
        vals = [hub[p] for p in prods if r.loc[c, p] > 1]
        assert got[c] == pytest.approx(sum(vals) / len(vals), abs=1e-15) if vals else np.isnan(got[c])


def test_loaders_and_writers(tmp_path):
    (tmp_path / "t.csv").write_text(
        "country_iso3,product_hs4,year,export_usd\nAAA,0101,2023,1\nAAA,0202,2023,1\nBBB,0101,2023,2\n"
        "CCC,0101,2023,1\nCCC,0202,2023,3\nAAA,0101,2016,99\n", encoding="utf-8")
    (tmp_path / "p.csv").write_text("country_iso3,year,population\nAAA,2023,1\nBBB,2023,2\nCCC,2023,1\n",
                                    encoding="utf-8")
    tm = load_trade_matrix(tmp_path / "t.csv", tmp_path / "p.csv", 2023)
    assert isinstance(tm, TradeMatrix)
    assert tm.rca().to_numpy().tolist() == rca(E).to_numpy().tolist()
    write_matrix(tm.rpop(), tmp_path / "r.csv", "rpop")
    back = pd.read_csv(tmp_path / "r.csv", dtype={"product_hs4": str})
    assert list(back.columns) == ["country_iso3", "product_hs4", "rpop"] and len(back) == 6
    (tmp_path / "pci.csv").write_text("product_hs4,pci\n0101,0.5\n0202,-0.5\n", encoding="utf-8")
    assert load_complexity(tmp_path / "pci.csv")["0202"] == -0.5


def test_missing_population_rejected():
    with pytest.raises(ValueError):
        TradeMatrix(E, POP.iloc[:2])


def test_complexity_and_hub_correlations():
    rng = np.random.default_rng(1)
    # nested presence: diverse countries export rare products
    n_c, n_p = 12, 15
    pres = (np.arange(n_p)[None, :] < np.linspace(3, n_p, n_c)[:, None]).astype(int)
    pres = pd.DataFrame(pres, index=[f"C{k}" for k in range(n_c)], columns=[f"{1000 + k}" for k in range(n_p)])
    eci, pci = compute_complexity(pres)
    assert spearman(eci, pres.sum(axis=1)) > 0.9
    hub = pd.Series(rng.random(n_p), index=pres.columns)
    out = hub_complexity_correlations(hub, pres * 2.0, pci, eci)
    assert out["n_products"] == n_p and -1 <= out["pci_vs_hub"] <= 1
