"""Comparison of two product networks over their shared products."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .network import ProductNetwork
from .trade import pearson


@dataclass
class NetworkAlignment:
    nodes: list
    a: np.ndarray
    b: np.ndarray
    only_a: list
    only_b: list

    def binary(self):
        return (self.a > 0).astype(float), (self.b > 0).astype(float)


def align(net_a: ProductNetwork, net_b: ProductNetwork) -> NetworkAlignment:
    """Dense weight matrices of both networks on the sorted common node set."""
    common = sorted(set(net_a.nodes) & set(net_b.nodes))
    if not common:
        raise ValueError("empty intersection")

    def sub(net):
        idx = np.array([net.pos[p] for p in common])
        return net.weight[idx][:, idx].toarray()

    return NetworkAlignment(
        common,
        sub(net_a),
        sub(net_b),
        sorted(set(net_a.nodes) - set(common)),
        sorted(set(net_b.nodes) - set(common)),
    )


def edge_correlation(al: NetworkAlignment, mode: str = "binary") -> float:
    """Pearson correlation over all off-diagonal ordered pairs."""
    if mode == "binary":
        a, b = al.binary()
    elif mode == "weighted":
        a, b = al.a, al.b
    else:
        raise ValueError(f"unknown mode {mode!r}")
    off = ~np.eye(len(al.nodes), dtype=bool)
    return pearson(a[off], b[off])


def degree_correlation(al: NetworkAlignment, direction: str = "in", mode: str = "binary") -> float:
    """Correlation of per-node in- or out-degrees on the aligned subnetworks."""
    if mode == "binary":
        a, b = al.binary()
    elif mode == "weighted":
        a, b = al.a, al.b
    else:
        raise ValueError(f"unknown mode {mode!r}")
    off = ~np.eye(len(al.nodes), dtype=bool)
    a, b = a * off, b * off
    axis = {"in": 0, "out": 1}[direction]
    return pearson(a.sum(axis=axis), b.sum(axis=axis))


def compare_networks(net_a: ProductNetwork, net_b: ProductNetwork, mode: str = "binary") -> dict:
    al = align(net_a, net_b)
    return {
        "n_common": len(al.nodes),
        "only_a": al.only_a,
        "only_b": al.only_b,
        "mode": mode,
        "edge_correlation": edge_correlation(al, mode),
        "in_degree_correlation": degree_correlation(al, "in", mode),
        "out_degree_correlation": degree_correlation(al, "out", mode),
    }


def load_external_edges(path) -> ProductNetwork:
    """Read an external ``source_hs4,target_hs4[,weight]`` edge list."""
    df = pd.read_csv(path, dtype={"source_hs4": str, "target_hs4": str})
    if not {"source_hs4", "target_hs4"} <= set(df.columns):
        raise ValueError(f"{path}: expected header 'source_hs4,target_hs4[,weight]'")
    if "weight" not in df.columns:
        df["weight"] = 1.0
    df = df.groupby(["source_hs4", "target_hs4"], as_index=False)["weight"].max()
    return ProductNetwork.from_edges(df)


def load_network(path) -> ProductNetwork:
    """A ``network.json`` or an edge-list CSV, by extension."""
    if str(path).endswith(".json"):
        return ProductNetwork.from_json(path)
    return load_external_edges(path)


def sweep(index, reference: ProductNetwork, firmcounts, thresholds, value_min: float = 1000.0, mode: str = "binary") -> pd.DataFrame:
    """Edge and degree correlations against ``reference`` over a parameter grid.

    ``index`` is a :class:`~recipe_net.recipe.ProducerBuyerIndex`; candidate
    ratios are computed once and filtered per cell, which gives the same edges
    as re-running inference with each ``(firmcount, threshold)`` pair.
    """
    from .recipe import build_edge_list

    base = build_edge_list(index, float(min(thresholds)), int(min(firmcounts)), value_min)
    rows = []
    for fc in firmcounts:
        for thr in thresholds:
            cell = base[(base["firmcount"] >= fc) & (base["weight"] > thr)]
            row = {"firmcount": int(fc), "threshold": float(thr), "n_edges": len(cell)}
            if len(cell):
                net = ProductNetwork.from_edges(cell)
                try:
                    al = align(net, reference)
                except ValueError:
                    al = None
            else:
                al = None
            if al is not None and len(al.nodes) >= 2:
                row.update(
                    n_common=len(al.nodes),
                    edge_correlation=edge_correlation(al, mode),
                    in_degree_correlation=degree_correlation(al, "in", mode),
                    out_degree_correlation=degree_correlation(al, "out", mode),
                )
            else:
                row.update(n_common=0 if al is None else len(al.nodes), edge_correlation=np.nan,
                           in_degree_correlation=np.nan, out_degree_correlation=np.nan)
            rows.append(row)
    return pd.DataFrame(rows)


def parse_range(text: str, kind=float) -> list:
    """``"2:10"`` -> 2..10 inclusive in unit steps, ``"1:5:0.5"`` with a step, ``"2,4,8"`` as listed."""
    if "," in text:
        return [kind(v) for v in text.split(",")]
    parts = text.split(":")
    if len(parts) == 1:
        return [kind(parts[0])]
    lo, hi = float(parts[0]), float(parts[1])
    step = float(parts[2]) if len(parts) > 2 else 1.0
    if step <= 0 or hi < lo:
        raise ValueError(f"bad range {text!r}")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [kind(lo + k * step) for k in range(n)]
