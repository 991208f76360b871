import numpy as np
import pandas as pd
import pytest

from recipe_net.network import ProductNetwork


def random_transactions(rng, n_entities, n_products, n_rows, ties=False):
    """Entity-level transactions with heavy-tailed values, optionally with exact ties."""
    sup = rng.integers(n_entities, size=n_rows)
    buy = rng.integers(n_entities, size=n_rows)
    clash = sup == buy
    buy[clash] = (buy[clash] + 1) % n_entities
    prod = rng.integers(n_products, size=n_rows)
    if ties:
        values = rng.integers(1, 4, size=n_rows).astype(float) * 500.0
    else:
        values = np.round(rng.lognormal(7.0, 1.5, size=n_rows), 2)
    return pd.DataFrame(
        {
            "supplier_id": [f"E{k:05d}" for k in sup],
            "buyer_id": [f"E{k:05d}" for k in buy],
            "product": [f"{10 + k:02d}01" for k in prod],
            "value_usd": values,
        }
    )


def random_network(rng, n, m, weighted=True, self_loops=False):
    pairs = set()
    while len(pairs) < m:
        s, t = rng.integers(n, size=2)
        if s != t or self_loops:
            pairs.add((int(s), int(t)))
    pairs = sorted(pairs)
    nodes = [f"{1000 + k}" for k in range(n)]
    w = rng.uniform(0.5, 5.0, size=len(pairs)) if weighted else np.ones(len(pairs))
    df = pd.DataFrame(
        {
            "source_hs4": [nodes[s] for s, _ in pairs],
            "target_hs4": [nodes[t] for _, t in pairs],
            "weight": w,
        }
    )
    return ProductNetwork.from_edges(df, nodes=nodes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def recover_world(world, tmp_dir, max_sections=5):
    """Ingest a generated world from disk and infer its edges with default thresholds."""
    from recipe_net.hs import load_sections
    from recipe_net.ingest import HSConcordance, ingest
    from recipe_net.recipe import ProducerBuyerIndex, build_edge_list

    paths = world.write(tmp_dir)
    sections = load_sections(paths["sections"])
    conc = HSConcordance.from_csv(paths["concordance"], hs2022_codes=set(sections))
    res = ingest(paths["transactions"], paths["firms"], paths["ownership"], conc, sections, max_sections=max_sections)
    index = ProducerBuyerIndex(res.transactions)
    return index, build_edge_list(index)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
