"""Producer/buyer sets and the excess-purchase ratio between products.

An entity *produces* ``j`` when its total sales of ``j`` strictly exceed the
mean over all entities that sell ``j``; it *buys* ``i`` when its purchases of
``i`` strictly exceed the mean over all buyers of ``i``. The importance of
``i`` as an input to ``j`` is then

    A[i, j] = (|buyers(i) & producers(j)| / |producers(j)|) / (|buyers(i)| / |S|)

where ``S`` is every entity appearing in at least one transaction.

Sums are correctly rounded (``math.fsum``) and the strict "above the mean"
test is settled in exact rational arithmetic when a total sits within
rounding distance of the mean, so results do not depend on row order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pandas as pd
import scipy.sparse as sp

EDGE_COLUMNS = ["source_hs4", "target_hs4", "weight", "firmcount", "value_usd"]

# relative band around the mean where the float comparison is re-done exactly
_TIE_BAND = 1e-9


@dataclass(frozen=True)
class EdgeCandidate:
    source: str
    target: str
    weight: float
    firmcount: int
    value_usd: float


def _group_fsum(keys_a: np.ndarray, keys_b: np.ndarray, values: np.ndarray):
    """Correctly rounded sums of ``values`` grouped by ``(keys_a, keys_b)``."""
    order = np.lexsort((keys_b, keys_a))
    a, b, v = keys_a[order], keys_b[order], values[order]
    if len(a) == 0:
        return a, b, v.astype(float)
    start = np.ones(len(a), dtype=bool)
    start[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    idx = np.flatnonzero(start)
    sizes = np.diff(np.append(idx, len(a)))
    sums = v[idx].astype(float)
    for g in np.flatnonzero(sizes > 1):
        s = idx[g]
        sums[g] = math.fsum(v[s : s + sizes[g]])
    return a[idx], b[idx], sums


def _above_mean(matrix: sp.csc_matrix) -> tuple[sp.csc_matrix, np.ndarray]:
    """Boolean mask of entries strictly above their column mean.

    The mean is over stored (positive) entries of each column.
    """
    n_prod = matrix.shape[1]
    means = np.zeros(n_prod)
    keep = np.zeros(matrix.nnz, dtype=bool)
    indptr, data = matrix.indptr, matrix.data
    for j in range(n_prod):
        lo, hi = indptr[j], indptr[j + 1]
        if hi == lo:
            continue
        col = data[lo:hi]
        total = math.fsum(col)
        count = hi - lo
        mean = total / count
        means[j] = mean
        above = col > mean
        near = np.abs(col - mean) <= _TIE_BAND * abs(mean)
        if near.any():
            exact_total = sum(Fraction(x) for x in col)
            for k in np.flatnonzero(near):
                above[k] = Fraction(col[k]) * count > exact_total
        keep[lo:hi] = above
    cum = np.concatenate([[0], np.cumsum(keep)])
    mask = sp.csc_matrix(
        (np.ones(int(keep.sum()), dtype=bool), matrix.indices[keep], cum[indptr]), shape=matrix.shape
    )
    return mask, means


class ProducerBuyerIndex:
    """Per-product producer and buyer sets for a set of entities.

    Parameters
    ----------
    transactions : DataFrame
        Columns ``supplier_id``, ``buyer_id``, ``product``, ``value_usd``.
    products : sequence of str, optional
        Product universe; defaults to every product traded.
    """

    def __init__(self, transactions: pd.DataFrame, products=None):
        tx = transactions
        ent_codes, entities = pd.factorize(
            pd.concat([tx["supplier_id"], tx["buyer_id"]], ignore_index=True), sort=True
        )
        self.entities = np.asarray(entities, dtype=object)
        if products is None:
            products = sorted(tx["product"].unique())
        self.products = list(products)
        self.product_pos = {p: k for k, p in enumerate(self.products)}
        prod_codes = tx["product"].map(self.product_pos)
        if prod_codes.isna().any():
            raise ValueError("transactions contain products outside the product universe")
        prod_codes = prod_codes.to_numpy(dtype=np.int64)
        n = len(tx)
        sup, buy = ent_codes[:n], ent_codes[n:]
        values = tx["value_usd"].to_numpy(dtype=float)
        shape = (len(self.entities), len(self.products))

        e, p, s = _group_fsum(sup, prod_codes, values)
        self.sales = sp.csc_matrix((s, (e, p)), shape=shape)
        e, p, s = _group_fsum(buy, prod_codes, values)
        self.purchases = sp.csc_matrix((s, (e, p)), shape=shape)
        # zero-value rows carry no activity
        self.sales.eliminate_zeros()
        self.purchases.eliminate_zeros()
        self.sales.sort_indices()
        self.purchases.sort_indices()

        self.producers, self.sell_mean = _above_mean(self.sales)
        self.buyers, self.buy_mean = _above_mean(self.purchases)
        self.n_producers = np.diff(self.producers.indptr)
        self.n_buyers = np.diff(self.buyers.indptr)
        # |S^i_j| for every product pair, rows = input i, cols = output j
        b = self.buyers.astype(np.int64)
        pm = self.producers.astype(np.int64)
        self.cooccurrence = (b.T @ pm).tocsr()
        self.cooccurrence.eliminate_zeros()
        self._buy_values = self.purchases.multiply(self.buyers).tocsc()
        self._buy_values.sort_indices()
        self._value_cache: dict[tuple[int, int], float] = {}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def _column_members(self, m: sp.csc_matrix, k: int) -> np.ndarray:
        return m.indices[m.indptr[k] : m.indptr[k + 1]]

    def producer_set(self, product: str) -> set:
        k = self.product_pos.get(product)
        if k is None:
            return set()
        return set(self.entities[self._column_members(self.producers, k)])

    def buyer_set(self, product: str) -> set:
        k = self.product_pos.get(product)
        if k is None:
            return set()
        return set(self.entities[self._column_members(self.buyers, k)])

    def pair_value(self, i: int, j: int) -> float:
        """Summed purchases of input ``i`` by entities in buyers(i) & producers(j)."""
        key = (i, j)
        if key not in self._value_cache:
            lo, hi = self._buy_values.indptr[i], self._buy_values.indptr[i + 1]
            rows = self._buy_values.indices[lo:hi]
            vals = self._buy_values.data[lo:hi]
            mask = np.isin(rows, self._column_members(self.producers, j), assume_unique=True)
            self._value_cache[key] = math.fsum(vals[mask])
        return self._value_cache[key]

    def pair_weight(self, i: int, j: int, firmcount: int) -> float:
        return ratio(firmcount, int(self.n_producers[j]), int(self.n_buyers[i]), self.n_entities)

    def candidates(self) -> pd.DataFrame:
        """Every product pair with a non-empty overlap, unthresholded.

        ``value_usd`` is not filled here; it is computed on demand by
        :func:`build_edge_list` for pairs passing the cheaper filters.
        """
        c = self.cooccurrence.tocoo()
        i, j, fc = c.row.astype(np.int64), c.col.astype(np.int64), c.data.astype(np.int64)
        w = (fc / self.n_producers[j]) / (self.n_buyers[i] / self.n_entities)
        order = np.lexsort((j, i))
        return pd.DataFrame({"i": i[order], "j": j[order], "firmcount": fc[order], "weight": w[order]})


def ratio(firmcount: int, n_producers: int, n_buyers: int, n_entities: int) -> float:
    return (firmcount / n_producers) / (n_buyers / n_entities)


def producer_set(index: ProducerBuyerIndex, product: str) -> set:
    return index.producer_set(product)


def buyer_set(index: ProducerBuyerIndex, product: str) -> set:
    return index.buyer_set(product)


def excess_purchase_ratio(i: str, j: str, index: ProducerBuyerIndex) -> EdgeCandidate | None:
    """Importance of product ``i`` as an input to ``j``; ``None`` when no overlap."""
    pi, pj = index.product_pos.get(i), index.product_pos.get(j)
    if pi is None or pj is None:
        return None
    if index.n_producers[pj] == 0 or index.n_buyers[pi] == 0:
        return None
    fc = int(index.cooccurrence[pi, pj])
    if fc == 0:
        return None
    return EdgeCandidate(i, j, index.pair_weight(pi, pj, fc), fc, index.pair_value(pi, pj))


def build_edge_list(
    index: ProducerBuyerIndex,
    weight_threshold: float = 2.0,
    firmcount_min: int = 2,
    value_min: float = 1000.0,
) -> pd.DataFrame:
    """Retained edges as a frame with columns :data:`EDGE_COLUMNS`.

    An edge survives when ``weight > weight_threshold``, ``firmcount >=
    firmcount_min`` and ``value_usd >= value_min``.
    """
    cand = index.candidates()
    cand = cand[(cand["weight"] > weight_threshold) & (cand["firmcount"] >= firmcount_min)]
    values = np.array(
        [index.pair_value(i, j) for i, j in zip(cand["i"].to_numpy(), cand["j"].to_numpy())],
        dtype=float,
    )
    keep = values >= value_min
    cand = cand[keep]
    names = np.asarray(index.products, dtype=object)
    return pd.DataFrame(
        {
            "source_hs4": names[cand["i"].to_numpy()],
            "target_hs4": names[cand["j"].to_numpy()],
            "weight": cand["weight"].to_numpy(),
            "firmcount": cand["firmcount"].to_numpy(),
            "value_usd": values[keep],
        }
    ).reset_index(drop=True)


def edge_candidates(edges: pd.DataFrame) -> list[EdgeCandidate]:
    return [
        EdgeCandidate(r.source_hs4, r.target_hs4, float(r.weight), int(r.firmcount), float(r.value_usd))
        for r in edges.itertuples(index=False)
    ]


def write_edges(edges: pd.DataFrame, path) -> None:
    edges[EDGE_COLUMNS].to_csv(path, index=False, lineterminator="\n")


def read_edges(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"source_hs4": str, "target_hs4": str})
    missing = set(EDGE_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return df
