"""The directed weighted product network and its centrality measures."""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)

GOODS_CLASSES = ("capital", "intermediate", "consumption")


@dataclass
class ProductNetwork:
    """Products as nodes; ``weight[i, j] > 0`` means ``i`` is an input to ``j``.

    ``nodes`` is kept sorted so matrix positions are deterministic. Firm
    counts and transaction values ride along as sparse matrices with the
    same sparsity pattern as ``weight``.
    """

    nodes: list
    weight: sp.csr_matrix
    firmcount: sp.csr_matrix
    value: sp.csr_matrix
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pos = {p: k for k, p in enumerate(self.nodes)}

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return self.weight.nnz

    @classmethod
    def from_edges(cls, edges: pd.DataFrame, nodes=None, metadata=None) -> "ProductNetwork":
        """Build from a frame with ``source_hs4``, ``target_hs4``, ``weight`` and
        optionally ``firmcount`` and ``value_usd``."""
        src = edges["source_hs4"].astype(str).to_numpy()
        tgt = edges["target_hs4"].astype(str).to_numpy()
        if nodes is None:
            nodes = sorted(set(src) | set(tgt))
        else:
            nodes = sorted(set(nodes))
        pos = {p: k for k, p in enumerate(nodes)}
        try:
            r = np.array([pos[s] for s in src], dtype=np.int64)
            c = np.array([pos[t] for t in tgt], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"edge endpoint {exc.args[0]} not in node list") from None
        w = edges["weight"].to_numpy(dtype=float) if "weight" in edges else np.ones(len(r))
        if (w < 0).any():
            raise ValueError("negative edge weight")
        fc = edges["firmcount"].to_numpy(dtype=float) if "firmcount" in edges else np.zeros(len(r))
        val = edges["value_usd"].to_numpy(dtype=float) if "value_usd" in edges else np.zeros(len(r))
        shape = (len(nodes), len(nodes))

        def mat(data):
            m = sp.csr_matrix((data, (r, c)), shape=shape)
            m.sort_indices()
            return m

        keep = w > 0
        r, c = r[keep], c[keep]
        return cls(list(nodes), mat(w[keep]), mat(fc[keep]), mat(val[keep]), dict(metadata or {}))

    def edges(self) -> pd.DataFrame:
        w = self.weight.tocoo()
        order = np.lexsort((w.col, w.row))
        r, c = w.row[order], w.col[order]
        names = np.asarray(self.nodes, dtype=object)
        return pd.DataFrame(
            {
                "source_hs4": names[r],
                "target_hs4": names[c],
                "weight": w.data[order],
                "firmcount": np.asarray(self.firmcount[r, c]).ravel().astype(np.int64),
                "value_usd": np.asarray(self.value[r, c]).ravel(),
            }
        )

    def to_json(self, path) -> None:
        e = self.edges()
        doc = {
            "nodes": list(self.nodes),
            "edges": [
                [s, t, float(w), int(fc), float(v)]
                for s, t, w, fc, v in zip(e.source_hs4, e.target_hs4, e.weight, e.firmcount, e.value_usd)
            ],
            "metadata": self.metadata,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ProductNetwork":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        cols = ["source_hs4", "target_hs4", "weight", "firmcount", "value_usd"]
        edges = pd.DataFrame(doc["edges"], columns=cols)
        return cls.from_edges(edges, doc["nodes"], doc.get("metadata", {}))

    def adjacency(self, weighted: bool = True, self_loops: bool = False) -> sp.csr_matrix:
        a = self.weight.copy()
        if not self_loops:
            a.setdiag(0)
            a.eliminate_zeros()
        if not weighted:
            a.data[:] = 1.0
        return a


def largest_wcc(net: ProductNetwork) -> ProductNetwork:
    """Induced subnetwork on the largest weakly connected component.

    Equal-sized components are resolved in favour of the one holding the
    smallest HS code.
    """
    if net.n == 0:
        return net
    ncomp, labels = connected_components(net.weight, directed=True, connection="weak")
    sizes = np.bincount(labels, minlength=ncomp)
    # labels are assigned in order of first node, so the smallest label among
    # the largest components holds the smallest code
    first = np.full(ncomp, net.n)
    np.minimum.at(first, labels, np.arange(net.n))
    best = min(np.flatnonzero(sizes == sizes.max()), key=lambda k: first[k])
    keep = [net.nodes[k] for k in np.flatnonzero(labels == best)]
    return induced_subgraph(net, keep)


def induced_subgraph(net: ProductNetwork, nodes) -> ProductNetwork:
    nodes = sorted(set(nodes))
    unknown = [p for p in nodes if p not in net.pos]
    if unknown:
        raise ValueError(f"unknown product codes: {', '.join(unknown)}")
    idx = np.array([net.pos[p] for p in nodes], dtype=np.int64)

    def sub(m):
        s = m[idx][:, idx].tocsr()
        s.sort_indices()
        return s

    return ProductNetwork(nodes, sub(net.weight), sub(net.firmcount), sub(net.value), dict(net.metadata))


def degrees(net: ProductNetwork) -> pd.DataFrame:
    """In/out neighbour counts and weighted strengths, self-loops excluded."""
    a = net.adjacency(weighted=True)
    b = a.copy()
    b.data[:] = 1.0
    return pd.DataFrame(
        {
            "hs4": net.nodes,
            "in_degree": np.asarray(b.sum(axis=0)).ravel().astype(np.int64),
            "out_degree": np.asarray(b.sum(axis=1)).ravel().astype(np.int64),
            "in_strength": np.asarray(a.sum(axis=0)).ravel(),
            "out_strength": np.asarray(a.sum(axis=1)).ravel(),
        }
    )


def _betweenness_unit(adj: sp.csr_matrix, batch: int = 256) -> np.ndarray:
    """Brandes accumulation with all sources of a batch advanced level by level."""
    n = adj.shape[0]
    a = adj.copy()
    a.data[:] = 1.0
    at = a.T.tocsr()
    bc = np.zeros(n)
    for lo in range(0, n, batch):
        src = np.arange(lo, min(lo + batch, n))
        b = len(src)
        sigma = np.zeros((n, b))
        dist = np.full((n, b), -1, dtype=np.int64)
        sigma[src, np.arange(b)] = 1.0
        dist[src, np.arange(b)] = 0
        frontier = sigma.copy()
        d = 0
        while True:
            reach = at @ frontier
            new = (reach > 0) & (dist < 0)
            if not new.any():
                break
            d += 1
            dist[new] = d
            sigma[new] = reach[new]
            frontier = np.where(new, sigma, 0.0)
        delta = np.zeros((n, b))
        for level in range(d - 1, 0, -1):
            coef = np.where(dist == level + 1, (1.0 + delta) / np.where(sigma > 0, sigma, 1.0), 0.0)
            delta += np.where(dist == level, sigma * (a @ coef), 0.0)
        bc += delta.sum(axis=1)
    return bc


def _betweenness_lengths(adj: sp.csr_matrix) -> np.ndarray:
    """Brandes with Dijkstra; edge length is 1/weight."""
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    bc = np.zeros(n)
    for s in range(n):
        sigma = np.zeros(n)
        sigma[s] = 1.0
        preds: list[list[int]] = [[] for _ in range(n)]
        settled: dict[int, float] = {}
        seen = {s: 0.0}
        order = []
        tick = 0
        heap = [(0.0, tick, s, s)]
        while heap:
            dv, _, pred, v = heapq.heappop(heap)
            if v in settled:
                continue
            if v != s:
                sigma[v] += sigma[pred]
            settled[v] = dv
            order.append(v)
            for k in range(indptr[v], indptr[v + 1]):
                w = int(indices[k])
                vw = dv + 1.0 / data[k]
                if w in settled:
                    continue
                if w not in seen or vw < seen[w]:
                    seen[w] = vw
                    tick += 1
                    heapq.heappush(heap, (vw, tick, v, w))
                    sigma[w] = 0.0
                    preds[w] = [v]
                elif vw == seen[w]:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


def betweenness(net: ProductNetwork, weighted: bool = False) -> np.ndarray:
    """Raw directed shortest-path betweenness over ordered node pairs.

    Edges have unit length unless ``weighted``, in which case length is
    ``1 / weight``. Self-loops are ignored.
    """
    adj = net.adjacency(weighted=True)
    if net.n == 0:
        return np.zeros(0)
    if weighted:
        return _betweenness_lengths(adj)
    return _betweenness_unit(adj)


@dataclass
class HitsResult:
    hub: np.ndarray
    authority: np.ndarray
    iterations: int
    converged: bool


def hits(net: ProductNetwork, tol: float = 1e-12, max_iter: int = 1000, weighted: bool = True) -> HitsResult:
    """Hub and authority scores, each normalised to unit sum.

    Starts from uniform hubs and alternates ``authority = A.T @ hub`` and
    ``hub = A @ authority`` until neither vector moves by more than ``tol``.
    """
    a = net.adjacency(weighted=weighted)
    if a.nnz == 0 or a.data.sum() == 0:
        raise ValueError("HITS is undefined on a network without edges")
    at = a.T.tocsr()
    hub = np.full(net.n, 1.0 / net.n)
    auth = np.zeros(net.n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_auth = at @ hub
        new_auth /= new_auth.sum()
        new_hub = a @ new_auth
        new_hub /= new_hub.sum()
        change = max(np.abs(new_hub - hub).max(), np.abs(new_auth - auth).max())
        hub, auth = new_hub, new_auth
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("HITS did not converge in %d iterations", max_iter)
    return HitsResult(hub, auth, it, converged)


def load_goods_classes(path) -> dict[str, str]:
    """Read an ``hs4,class`` table."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if not {"hs4", "class"} <= set(df.columns):
        raise ValueError(f"{path}: expected header 'hs4,class'")
    return dict(zip(df["hs4"], df["class"].str.strip().str.lower()))


def goods_classification_join(net: ProductNetwork, table) -> dict[str, str]:
    """Attach capital/intermediate/consumption labels; unmapped nodes get ``unclassified``."""
    if isinstance(table, (str, Path)):
        table = load_goods_classes(table)
    out = {}
    for p in net.nodes:
        c = table.get(p, "unclassified")
        out[p] = c if c in GOODS_CLASSES else "unclassified"
    return out


def mean_out_degree_by_class(report: pd.DataFrame) -> pd.DataFrame:
    return (
        report.groupby("class")["out_degree"]
        .agg(["count", "mean"])
        .rename(columns={"count": "n_products", "mean": "mean_out_degree"})
        .reset_index()
    )


def centrality_report(
    net: ProductNetwork, weighted_paths: bool = False, classes: dict | None = None
) -> pd.DataFrame:
    """Frame matching the ``nodes.csv`` layout, plus weighted strengths."""
    rep = degrees(net)
    rep["betweenness"] = betweenness(net, weighted=weighted_paths)
    if net.adjacency().nnz:
        h = hits(net)
        rep["hub"], rep["authority"] = h.hub, h.authority
    else:
        rep["hub"] = rep["authority"] = np.nan
    rep["class"] = [classes.get(p, "unclassified") for p in net.nodes] if classes else "unclassified"
    return rep[
        ["hs4", "in_degree", "out_degree", "betweenness", "hub", "authority", "class", "in_strength", "out_strength"]
    ]


NODES_COLUMNS = ["hs4", "in_degree", "out_degree", "betweenness", "hub", "authority", "class"]


def write_nodes(report: pd.DataFrame, path) -> None:
    report[NODES_COLUMNS].to_csv(path, index=False, lineterminator="\n")


def read_nodes(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"hs4": str})
