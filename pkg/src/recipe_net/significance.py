"""Is a named product set more internally connected than chance?

A product set ``G`` is scored with its share of the directed modularity of
the whole network,

    M_G = (internal_edges(G) - out_degree(G) * in_degree(G) / m) / m,

where the degrees are summed over ``G`` and ``m`` counts the directed edges.
Summed over the communities of a partition this is exactly the directed
(Leicht-Newman) modularity. The p-value compares ``M_G`` with the scores of
uniformly random node sets of the same size.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .network import ProductNetwork

BATCH = 1000


@dataclass
class ModularityTerms:
    x: sp.csr_matrix
    out_deg: np.ndarray
    in_deg: np.ndarray
    m: float


def modularity_terms(net: ProductNetwork, self_loops: bool = False, weighted: bool = False) -> ModularityTerms:
    x = net.adjacency(weighted=weighted, self_loops=self_loops)
    return ModularityTerms(
        x.tocsr(),
        np.asarray(x.sum(axis=1)).ravel(),
        np.asarray(x.sum(axis=0)).ravel(),
        float(x.sum()),
    )


def _indices(net: ProductNetwork, nodes) -> np.ndarray:
    nodes = list(dict.fromkeys(nodes))
    unknown = [p for p in nodes if p not in net.pos]
    if unknown:
        raise ValueError(f"unknown product codes: {', '.join(map(str, unknown))}")
    return np.array([net.pos[p] for p in nodes], dtype=np.int64)


def subgraph_modularity(
    net: ProductNetwork, nodes, self_loops: bool = False, weighted: bool = False, terms=None
) -> float:
    """Modularity contribution of one node set; 0 for an empty set."""
    idx = _indices(net, nodes)
    if len(idx) == 0:
        return 0.0
    t = terms if terms is not None else modularity_terms(net, self_loops, weighted)
    if t.m == 0:
        raise ValueError("network has no edges")
    internal = float(t.x[idx][:, idx].sum())
    expected = float(t.out_deg[idx].sum()) * float(t.in_deg[idx].sum()) / t.m
    return (internal - expected) / t.m


def directed_modularity(net: ProductNetwork, assignment, self_loops: bool = False) -> float:
    """Full Leicht-Newman directed modularity of a partition (dense formula)."""
    t = modularity_terms(net, self_loops)
    x = t.x.toarray()
    a = np.asarray(assignment)
    same = a[:, None] == a[None, :]
    b = x - np.outer(t.out_deg, t.in_deg) / t.m
    return float(b[same].sum() / t.m)


@dataclass
class SubgraphTest:
    node_set: list
    m: float
    modularity: float
    samples: int
    seed: int | None
    exceed: int
    p_value: float
    ensemble: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ensemble")
        ens = self.ensemble
        d["ensemble_summary"] = {
            "mean": float(ens.mean()),
            "std": float(ens.std()),
            "quantiles": {str(q): float(np.quantile(ens, q)) for q in (0.5, 0.9, 0.99, 0.999)},
        } if ens is not None and len(ens) else None
        return d

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _sample_scores(t: ModularityTerms, size: int, count: int, rng: np.random.Generator, dense_x) -> np.ndarray:
    n = len(t.out_deg)
    picks = np.argpartition(rng.random((count, n)), size - 1, axis=1)[:, :size]
    out_sum = t.out_deg[picks].sum(axis=1)
    in_sum = t.in_deg[picks].sum(axis=1)
    if dense_x is not None:
        internal = dense_x[picks[:, :, None], picks[:, None, :]].sum(axis=(1, 2), dtype=np.float64)
    else:
        z = np.zeros((count, n))
        np.put_along_axis(z, picks, 1.0, axis=1)
        internal = ((t.x @ z.T).T * z).sum(axis=1)
    return (internal - out_sum * in_sum / t.m) / t.m


def null_ensemble(
    net: ProductNetwork, size: int, samples: int, seed=None, terms=None, self_loops=False, weighted=False
) -> np.ndarray:
    """Scores of ``samples`` random node sets of ``size`` nodes.

    Each batch of ``BATCH`` draws has its own spawned seed stream, so the
    ensemble is reproducible bit for bit and batches could run anywhere.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if size > net.n:
        raise ValueError(f"set size {size} exceeds network size {net.n}")
    if size < 1:
        return np.zeros(samples)
    t = terms if terms is not None else modularity_terms(net, self_loops, weighted)
    dense_x = None
    if 4 * size * size <= t.x.nnz:
        dense_x = t.x.toarray()
    nbatch = -(-samples // BATCH)
    streams = np.random.SeedSequence(seed).spawn(nbatch)
    out = np.empty(samples)
    for b, ss in enumerate(streams):
        lo = b * BATCH
        count = min(BATCH, samples - lo)
        out[lo : lo + count] = _sample_scores(t, size, count, np.random.default_rng(ss), dense_x)
    return out


def null_ensemble_pvalue(
    net: ProductNetwork,
    nodes,
    samples: int = 100_000,
    seed=None,
    self_loops: bool = False,
    weighted: bool = False,
    keep_ensemble: bool = True,
) -> SubgraphTest:
    """Empirical upper-tail p-value ``(1 + #{M_rand >= M_G}) / (samples + 1)``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    idx = _indices(net, nodes)
    if len(idx) > net.n:
        raise ValueError("node set larger than network")
    t = modularity_terms(net, self_loops, weighted)
    mg = subgraph_modularity(net, nodes, terms=t)
    ens = null_ensemble(net, len(idx), samples, seed, terms=t)
    exceed = int((ens >= mg).sum())
    return SubgraphTest(
        [net.nodes[k] for k in idx],
        t.m,
        mg,
        samples,
        seed,
        exceed,
        (1 + exceed) / (samples + 1),
        ens if keep_ensemble else None,
    )


def read_node_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
