"""One test per acceptance criterion, each reporting a PASS/FAIL line."""

import filecmp
import json
import math
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.special import ndtr

import conftest
from conftest import random_network, random_transactions, recover_world
from oracles import (
    auc_pairwise,
    betweenness_bruteforce,
    hits_power,
    leicht_newman,
    recipe_oracle,
    set_partitions,
    spearman_oracle,
)
from recipe_net.communities import (
    mean_pairwise_vi,
    stability_matrix,
    stability_partition,
    stability_scan,
    stability_value,
    variation_of_information,
    directed_walk_operators,
)
from recipe_net.diversification import auc, entry_panel, probit_fit, probit_gradient, probit_loglik
from recipe_net.network import ProductNetwork, betweenness, hits, largest_wcc
from recipe_net.pipeline import PipelineConfig, run_pipeline
from recipe_net.recipe import EDGE_COLUMNS, ProducerBuyerIndex, build_edge_list
from recipe_net.significance import null_ensemble_pvalue, subgraph_modularity
from recipe_net.synthgen import WorldSpec, generate_trade, generate_world, score_recovery
from recipe_net.trade import TradeMatrix, rca, rpop, spearman

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@contextmanager
def criterion(n, text):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        line = f"FAIL criterion {n}: {text}"
        raise
    else:
        line = f"PASS criterion {n}: {text}"
    finally:
        line += f" ({time.perf_counter() - t0:.1f} s)"
        print(line)
        conftest.ACCEPTANCE_LINES.append(line)


def net_from(pairs, weights=None, nodes=None):
    df = pd.DataFrame(pairs, columns=["source_hs4", "target_hs4"])
    df["weight"] = 1.0 if weights is None else weights
    return ProductNetwork.from_edges(df, nodes=nodes)


@pytest.fixture(scope="module")
def default_world(tmp_path_factory):
    world = generate_world(WorldSpec.from_json(CONFIGS / "worldspec.json"))
    index, edges = recover_world(world, tmp_path_factory.mktemp("default_world"))
    return world, index, edges


def test_criterion_01_ratio_oracle():
    with criterion(1, "edge weights, firmcounts and values bit-exact vs set enumeration on 100 worlds, < 5 min"):
        t0 = time.perf_counter()
        for seed in range(100):
            rng = np.random.default_rng(10_000 + seed)
            n_ent = int(rng.integers(20, 10_001)) if seed % 10 else 10_000
            n_prod = int(rng.integers(3, 40))
            tx = random_transactions(rng, n_ent, n_prod, int(rng.integers(n_ent, 4 * n_ent)), ties=seed % 4 == 0)
            got = build_edge_list(ProducerBuyerIndex(tx), 1.0, 2, 100.0)
            expect, _, _ = recipe_oracle(tx, 1.0, 2, 100.0)
            got_map = {(s, t): (w, fc, v) for s, t, w, fc, v in got[EDGE_COLUMNS].itertuples(index=False)}
            assert set(got_map) == set(expect), seed
            for key, val in expect.items():
                assert got_map[key] == val, (seed, key)
        assert time.perf_counter() - t0 < 300


def test_criterion_02_planted_recovery(default_world):
    with criterion(2, "default world precision/recall >= 0.8; common inputs below threshold for >= 95% of targets"):
        world, index, edges = default_world
        score = score_recovery(edges, world.truth)
        assert score["precision"] >= 0.8 and score["recall"] >= 0.8, score
        cand = index.candidates()
        planted = set(zip(world.truth["source_hs4"], world.truth["target_hs4"]))
        names = np.asarray(index.products, dtype=object)
        for u in world.common:
            rows = cand[cand["i"] == index.product_pos[u]]
            above = sum(1 for j, w in zip(rows["j"], rows["weight"]) if w > 2.0 and (u, names[j]) not in planted)
            targets = len(index.products) - 1 - sum(1 for s, _ in planted if s == u)
            assert 1 - above / targets >= 0.95, (u, above, targets)


def test_criterion_03_betweenness():
    with criterion(3, "betweenness equals path enumeration on 50 digraphs to 1e-9"):
        for seed in range(50):
            rng = np.random.default_rng(500 + seed)
            n = int(rng.integers(5, 51))
            m = int(rng.integers(n, min(300, n * (n - 1)) + 1))
            net = random_network(rng, n, m)
            oracle = betweenness_bruteforce(net.adjacency().toarray() > 0)
            assert np.max(np.abs(betweenness(net) - oracle)) <= 1e-9, seed


def test_criterion_04_hits():
    with criterion(4, "HITS vs dense power iteration to 1e-9, unit sums to 1e-12, scale invariant"):
        for seed in range(30):
            rng = np.random.default_rng(700 + seed)
            n = int(rng.integers(5, 31))
            net = random_network(rng, n, int(rng.integers(2 * n, n * (n - 1) // 2 + 1)))
            h = hits(net)
            oh, oa = hits_power(net.adjacency().toarray())
            assert np.max(np.abs(h.hub - oh)) <= 1e-9 and np.max(np.abs(h.authority - oa)) <= 1e-9
            assert abs(h.hub.sum() - 1) <= 1e-12 and abs(h.authority.sum() - 1) <= 1e-12
            e = net.edges()
            for c in (1e-3, 7.5, 1e4):
                hs = hits(net_from(list(zip(e.source_hs4, e.target_hs4)), e.weight * c, nodes=net.nodes))
                assert np.max(np.abs(hs.hub - h.hub)) <= 1e-10
                assert np.max(np.abs(hs.authority - h.authority)) <= 1e-10


def blocks_network(sizes, p_in, p_out, seed, super_of=None, p_mid=0.0):
    rng = np.random.default_rng(seed)
    label = np.repeat(np.arange(len(sizes)), sizes)
    nodes = [f"{1000 + k}" for k in range(len(label))]
    rows = []
    for i in range(len(label)):
        for j in range(len(label)):
            if i == j:
                continue
            if label[i] == label[j]:
                p = p_in
            elif super_of is not None and super_of[label[i]] == super_of[label[j]]:
                p = p_mid
            else:
                p = p_out
            if rng.random() < p:
                rows.append((nodes[i], nodes[j]))
    return net_from(rows, nodes=nodes), label


def test_criterion_05_stability_communities():
    with criterion(5, "singletons at small t, exhaustive two-block optimum, 3-block VI = 0, non-increasing counts"):
        net, _ = blocks_network([6, 6, 6], 0.9, 0.05, seed=3)
        assert stability_partition(net, 1e-3, iterations=20, seed=0).n_communities == net.n

        net, label = blocks_network([5, 5], 1.0, 0.0, seed=0)
        p, pi = directed_walk_operators(net, teleport=0.0)
        f = stability_matrix(p, pi, 5.0)
        best, best_val = None, -math.inf
        for part in set_partitions(list(range(10))):
            a = np.empty(10, dtype=np.int64)
            for c, members in enumerate(part):
                a[members] = c
            v = stability_value(f, a)
            if v > best_val + 1e-15:
                best, best_val = a, v
        assert variation_of_information(best, label) == 0.0
        got = stability_partition(net, 5.0, iterations=20, seed=0, teleport=0.0)
        assert variation_of_information(got.assignment, label) == 0.0

        net, label = blocks_network([10, 10, 10], 0.9, 0.03, seed=4)
        part, runs = stability_partition(net, 3.0, iterations=100, seed=1, return_runs=True)
        assert variation_of_information(part.assignment, label) == 0.0 and mean_pairwise_vi(runs) == 0.0

        for seed in range(3):
            net, _ = blocks_network([8, 8, 8, 8], 0.9, 0.02, seed=seed, super_of=[0, 0, 1, 1], p_mid=0.25)
            counts = stability_scan(net, iterations=100, seed=7).n_communities()
            assert (np.diff(counts) <= 0).all(), counts


def test_criterion_06_modularity_decomposition():
    with criterion(6, "sum of subgraph modularities equals full modularity on 100 networks to 1e-12; hand case 0.24"):
        for seed in range(100):
            rng = np.random.default_rng(900 + seed)
            n = int(rng.integers(3, 51))
            net = random_network(rng, n, int(rng.integers(1, min(n * (n - 1), 300) + 1)))
            k = int(rng.integers(1, n + 1))
            assign = rng.integers(k, size=n)
            total = sum(subgraph_modularity(net, [net.nodes[i] for i in np.flatnonzero(assign == c)])
                        for c in range(k))
            assert abs(total - leicht_newman(net.adjacency(weighted=False).toarray(), assign)) <= 1e-12
        hand = net_from([("a", "b"), ("b", "a"), ("c", "d"), ("d", "e"), ("e", "c")], 3.0)
        assert subgraph_modularity(hand, ["a", "b"]) == (2.0 - 2.0 * 2.0 / 5.0) / 5.0
        assert abs(subgraph_modularity(hand, ["a", "b"]) - 0.24) < 1e-15


def planted_cluster(n, size, p, p_in, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n)) < p
    a[:size, :size] |= rng.random((size, size)) < p_in
    np.fill_diagonal(a, False)
    r, c = np.nonzero(a)
    nodes = np.array([f"{1000 + k}" for k in range(n)])
    return net_from(list(zip(nodes[r], nodes[c])), nodes=list(nodes)), list(nodes[:size])


def test_criterion_07_null_ensemble():
    with criterion(7, "planted p < 0.001 at 100k; random median p in [0.4, 0.6]; reproducible; 1200 nodes < 60 s"):
        net, cluster = planted_cluster(300, 20, 0.03, 0.6, seed=0)
        assert null_ensemble_pvalue(net, cluster, samples=100_000, seed=1).p_value < 0.001

        net, _ = planted_cluster(200, 1, 0.05, 0.0, seed=0)
        rng = np.random.default_rng(5)
        ps = [null_ensemble_pvalue(net, list(rng.choice(net.nodes, size=15, replace=False)), samples=100_000,
                                   seed=trial, keep_ensemble=False).p_value for trial in range(100)]
        assert 0.4 <= float(np.median(ps)) <= 0.6, np.median(ps)

        a = null_ensemble_pvalue(net, cluster, samples=5000, seed=42)
        b = null_ensemble_pvalue(net, cluster, samples=5000, seed=42)
        assert a.p_value == b.p_value and np.array_equal(a.ensemble, b.ensemble)

        big = random_network(np.random.default_rng(0), 1200, 20_000, weighted=False)
        group = list(np.random.default_rng(1).choice(big.nodes, size=60, replace=False))
        t0 = time.perf_counter()
        null_ensemble_pvalue(big, group, samples=100_000, seed=0, keep_ensemble=False)
        assert time.perf_counter() - t0 < 60


def test_criterion_08_trade_metrics():
    with criterion(8, "RCA/Rpop exact on toy tables, scale invariant; Spearman matches oracle to 1e-12"):
        e = pd.DataFrame([[1.0, 1.0], [2.0, 0.0], [1.0, 3.0]], index=["AAA", "BBB", "CCC"], columns=["0101", "0202"])
        pop = pd.Series([1.0, 2.0, 1.0], index=e.index)
        assert rca(e).to_numpy().tolist() == [[1.0, 1.0], [2.0, 0.0], [0.5, 1.5]]
        assert rpop(e, pop).to_numpy().tolist() == [[1.0, 1.0], [1.0, 0.0], [1.0, 3.0]]
        assert rpop(np.array([[100.0], [900.0]]), [10.0, 990.0])[0, 0] == 10.0
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.integers(0, 1000, size=(5, 7)).astype(float)
            pp = rng.integers(1, 10**6, size=5).astype(float)
            c = 2.0 ** int(rng.integers(-8, 9))
            assert np.array_equal(rca(x * c), rca(x))
            assert np.array_equal(rpop(x * c, pp), rpop(x, pp)) and np.array_equal(rpop(x, pp * c), rpop(x, pp))
            u, v = rng.integers(0, 6, size=20).astype(float), rng.normal(size=20)
            assert abs(spearman(u, v) - spearman_oracle(u, v)) <= 1e-12


def test_criterion_09_probit():
    with criterion(9, "gradient vs finite differences, (alpha, beta) within 3 SE at 50k, AUC checks, entry rates"):
        rng = np.random.default_rng(9)
        for _ in range(10):
            x = np.column_stack([np.ones(400), rng.normal(size=(400, 3))])
            y = (x @ rng.normal(scale=0.5, size=4) + rng.normal(size=400) > 0).astype(float)
            b = rng.normal(scale=0.7, size=4)
            g = probit_gradient(b, x, y)
            for j in range(4):
                e = np.zeros(4)
                e[j] = 1e-5
                fd = (probit_loglik(b + e, x, y) - probit_loglik(b - e, x, y)) / 2e-5
                assert abs(fd - g[j]) <= 1e-6 * max(1.0, abs(g[j]))

        d = rng.random(50_000)
        y = (-1.5 + 2.0 * d + rng.normal(size=50_000) > 0).astype(np.int8)
        fit = probit_fit(pd.DataFrame({"down_density": d, "entry": y, "product_hs4": "0101", "country_iso3": "A"}))
        assert abs(fit.coef["const"] + 1.5) < 3 * fit.se["const"]
        assert abs(fit.coef["down_density"] - 2.0) < 3 * fit.se["down_density"]

        assert auc(np.zeros(40), np.r_[np.ones(10), np.zeros(30)]) == 0.5
        for _ in range(20):
            s = rng.integers(0, 6, size=60).astype(float)
            yy = np.r_[0, 1, (rng.random(58) < 0.3)].astype(int)
            assert abs(auc(s, yy) - auc_pairwise(s, yy)) <= 1e-12

        products = [f"{1000 + k}" for k in range(80)]
        down = {p: sorted({products[(k + 1) % 80], products[(k + 7) % 80], products[(k + 31) % 80]})
                for k, p in enumerate(products)}
        net = net_from([(p, t) for p, ts in down.items() for t in ts])
        tw = generate_trade(products, down, n_countries=150, seed=3)
        base, end = TradeMatrix(tw.base, tw.population), TradeMatrix(tw.end, tw.population)
        panel = entry_panel(base.rpop(), end.rpop(), net, base.world_trade())
        kept = sorted(panel.frame["product_hs4"].unique())
        r_base = base.rpop().drop(index="ROW")[kept]
        assert panel.stats["n_absent"] == int((r_base < 0.05).to_numpy().sum())
        expected = ndtr((-0.5 - np.log(0.1)) / 1.2) * ndtr(-1.8 + 4.0 * panel.frame["down_density"].to_numpy())
        se = math.sqrt(float((expected * (1 - expected)).sum()))
        assert abs(panel.stats["n_entries"] - expected.sum()) < 4 * se


def test_criterion_10_qualitative_patterns(default_world):
    with criterion(10, "downstream beta > 0 in >= 99/100 seeds; AUC falls with presence threshold; edges fall with firmcount"):
        world, index, _ = default_world
        counts = [len(build_edge_list(index, 2.0, fc, 1000.0)) for fc in range(2, 11)]
        assert all(b <= a for a, b in zip(counts, counts[1:])) and counts[0] > counts[-1]

        net = largest_wcc(ProductNetwork.from_edges(build_edge_list(index)))
        down: dict[str, list] = {}
        for s, t in zip(world.truth["source_hs4"], world.truth["target_hs4"]):
            down.setdefault(s, []).append(t)
        positive, monotone = 0, 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for seed in range(100):
                tw = generate_trade(world.products, down, seed=seed)
                base = TradeMatrix(tw.base, tw.population)
                r0, r1, wt = base.rpop(), TradeMatrix(tw.end, tw.population).rpop(), base.world_trade()
                fit = probit_fit(entry_panel(r0, r1, net, wt))
                positive += fit.converged and fit.coef["down_density"] > 0
                if seed < 10:
                    aucs = [probit_fit(entry_panel(r0, r1, net, wt, presence_thr=thr)).auc for thr in (0.1, 0.5, 2.0)]
                    monotone += aucs[0] > aucs[1] > aucs[2]
        assert positive >= 99, positive
        assert monotone == 10, monotone


def test_criterion_11_end_to_end_determinism(tmp_path):
    with criterion(11, "default pipeline byte-identical across two runs, each < 10 min"):
        cfg = PipelineConfig.load(CONFIGS / "pipeline.json")
        for name in ("a", "b"):
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                run_pipeline(cfg, tmp_path / name)
            assert time.perf_counter() - t0 < 600
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b and len(files_a) > 10
        for rel in files_a:
            if rel.name == "manifest.json":
                continue
            assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False), rel
        ma, mb = (json.loads((tmp_path / n / "manifest.json").read_text()) for n in ("a", "b"))
        ma.pop("wall_seconds"), mb.pop("wall_seconds")
        assert ma == mb
