"""Country-product trade metrics and their links to network scores.

Matrices are country x product DataFrames (rows ``country_iso3``, columns
``product_hs4``); plain arrays work too and come back as arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import rankdata


def _wrap(like, values):
    if isinstance(like, pd.DataFrame):
        return pd.DataFrame(values, index=like.index, columns=like.columns)
    return values


def _safe_div(num, den):
    num, den = np.broadcast_arrays(np.asarray(num, dtype=float), np.asarray(den, dtype=float))
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


@dataclass
class TradeMatrix:
    exports: pd.DataFrame
    population: pd.Series
    year: int | None = None

    def __post_init__(self):
        if (self.exports.to_numpy() < 0).any():
            raise ValueError("negative export values")
        pop = self.population.reindex(self.exports.index)
        if pop.isna().any():
            missing = list(pop.index[pop.isna()])
            raise ValueError(f"no population for {missing[:10]}")
        if (pop <= 0).any():
            raise ValueError("populations must be positive")
        self.population = pop

    @property
    def countries(self) -> list:
        return list(self.exports.index)

    @property
    def products(self) -> list:
        return list(self.exports.columns)

    def rca(self) -> pd.DataFrame:
        return rca(self.exports)

    def rpop(self) -> pd.DataFrame:
        return rpop(self.exports, self.population)

    def world_trade(self) -> pd.Series:
        return self.exports.sum(axis=0)


def rca(exports):
    """Balassa revealed comparative advantage.

    Countries exporting nothing get a row of zeros, as do products nobody
    exports.
    """
    e = np.asarray(exports, dtype=float)
    total = e.sum()
    if total == 0:
        raise ValueError("all-zero export matrix")
    country_share = _safe_div(e, e.sum(axis=1, keepdims=True))
    world_share = e.sum(axis=0, keepdims=True) / total
    return _wrap(exports, _safe_div(country_share, world_share))


def rpop(exports, population):
    """Per-capita exports of each product relative to the world per-capita level."""
    e = np.asarray(exports, dtype=float)
    pop = np.asarray(population, dtype=float).reshape(-1)
    if (pop <= 0).any():
        raise ValueError("populations must be positive")
    per_capita = e / pop[:, None]
    world = e.sum(axis=0, keepdims=True) / pop.sum()
    return _wrap(exports, _safe_div(per_capita, world))


def presence_matrix(metric, threshold: float = 1.0):
    if threshold <= 0:
        raise ValueError("presence threshold must be positive")
    m = (np.asarray(metric, dtype=float) >= threshold).astype(np.int8)
    return _wrap(metric, m)


def spearman(x, y) -> float:
    """Pearson correlation of mid-ranks."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two vectors of equal length")
    if len(x) < 3:
        raise ValueError("spearman needs at least 3 points")
    return pearson(rankdata(x), rankdata(y))


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if den == 0:
        return float("nan")
    return float(np.clip((dx * dy).sum() / den, -1.0, 1.0))


def top_k_products(nodes: pd.DataFrame, column: str = "betweenness", k: int = 50) -> list:
    """Top ``k`` products by ``column``, ties broken by HS code."""
    if k > len(nodes):
        raise ValueError(f"k={k} exceeds the {len(nodes)} products available")
    ranked = nodes.sort_values([column, "hs4"], ascending=[False, True], kind="mergesort")
    return list(ranked["hs4"].iloc[:k])


def top_bc_export_share(nodes: pd.DataFrame, rca_matrix: pd.DataFrame, k: int = 50) -> pd.Series:
    """Per country, the share of the top-``k`` betweenness products with RCA > 1.

    Products missing from the trade data count as not exported.
    """
    top = top_k_products(nodes, "betweenness", k)
    r = rca_matrix.reindex(columns=top, fill_value=0.0)
    return (r > 1).sum(axis=1) / k


def country_mean_hub(rca_matrix: pd.DataFrame, hub: pd.Series) -> pd.Series:
    """Mean hub score over each country's RCA > 1 products; NaN when there are none."""
    common = [p for p in rca_matrix.columns if p in hub.index]
    adv = (rca_matrix[common] > 1).to_numpy()
    h = hub.reindex(common).to_numpy(dtype=float)
    count = adv.sum(axis=1)
    total = adv @ h
    mean = np.full(len(count), np.nan)
    np.divide(total, count, out=mean, where=count > 0)
    return pd.Series(mean, index=rca_matrix.index, name="mean_hub")


def compute_complexity(presence) -> tuple[pd.Series, pd.Series]:
    """ECI and PCI from a binary country x product matrix (eigenvector method).

    Countries and products with no presence are dropped. Signs are fixed so
    that ECI correlates positively with diversity.
    """
    m = presence.loc[presence.sum(axis=1) > 0, presence.sum(axis=0) > 0]
    mv = m.to_numpy(dtype=float)
    div, ubi = mv.sum(axis=1), mv.sum(axis=0)
    mcc = (mv / div[:, None]) @ (mv / ubi[None, :]).T
    mpp = (mv / ubi[None, :]).T @ (mv / div[:, None])

    def second(mat):
        vals, vecs = np.linalg.eig(mat)
        order = np.argsort(-vals.real)
        v = vecs[:, order[1]].real
        return (v - v.mean()) / v.std()

    eci, pci = second(mcc), second(mpp)
    if np.corrcoef(eci, div)[0, 1] < 0:
        eci = -eci
    # PCI is the mean ECI of exporters, up to scale
    if np.corrcoef(pci, (mv.T @ eci) / ubi)[0, 1] < 0:
        pci = -pci
    return pd.Series(eci, index=m.index, name="eci"), pd.Series(pci, index=m.columns, name="pci")


def load_trade(path, year: int | None = None) -> pd.DataFrame:
    """Country x product export matrix from ``country_iso3,product_hs4,year,export_usd``."""
    df = pd.read_csv(path, dtype={"country_iso3": str, "product_hs4": str})
    need = {"country_iso3", "product_hs4", "year", "export_usd"}
    if not need <= set(df.columns):
        raise ValueError(f"{path}: expected columns {sorted(need)}")
    if year is not None:
        df = df[df["year"] == year]
    if (df["export_usd"] < 0).any():
        raise ValueError(f"{path}: negative export values")
    mat = df.pivot_table(index="country_iso3", columns="product_hs4", values="export_usd", aggfunc="sum", fill_value=0.0)
    mat = mat.sort_index().sort_index(axis=1)
    mat.columns.name = None
    mat.index.name = "country_iso3"
    return mat.astype(float)


def load_population(path, year: int | None = None) -> pd.Series:
    df = pd.read_csv(path, dtype={"country_iso3": str})
    if not {"country_iso3", "year", "population"} <= set(df.columns):
        raise ValueError(f"{path}: expected header 'country_iso3,year,population'")
    if year is not None:
        df = df[df["year"] == year]
    return df.groupby("country_iso3")["population"].last().astype(float)


def load_trade_matrix(trade_path, population_path, year: int | None = None) -> TradeMatrix:
    exports = load_trade(trade_path, year)
    pop = load_population(population_path, year)
    return TradeMatrix(exports, pop, year)


def load_complexity(path) -> pd.Series:
    """Read ``product_hs4,pci`` or ``country_iso3,eci``."""
    df = pd.read_csv(path, dtype={"product_hs4": str, "country_iso3": str})
    if {"product_hs4", "pci"} <= set(df.columns):
        return df.set_index("product_hs4")["pci"].astype(float)
    if {"country_iso3", "eci"} <= set(df.columns):
        return df.set_index("country_iso3")["eci"].astype(float)
    raise ValueError(f"{path}: expected 'product_hs4,pci' or 'country_iso3,eci'")


def hub_complexity_correlations(hub: pd.Series, rca_matrix: pd.DataFrame, pci=None, eci=None) -> dict:
    """Rank correlations of PCI with hub score and of ECI with country mean hub."""
    out = {}
    if pci is not None:
        common = sorted(set(pci.index) & set(hub.index))
        out["pci_vs_hub"] = spearman(pci[common], hub[common]) if len(common) >= 3 else None
        out["n_products"] = len(common)
    if eci is not None:
        mean_hub = country_mean_hub(rca_matrix, hub).dropna()
        common = sorted(set(eci.index) & set(mean_hub.index))
        out["eci_vs_mean_hub"] = spearman(eci[common], mean_hub[common]) if len(common) >= 3 else None
        out["n_countries"] = len(common)
    return out


def write_matrix(mat: pd.DataFrame, path: str | Path, value_name: str) -> None:
    """Long-format CSV ``country_iso3,product_hs4,<value_name>``."""
    long = mat.stack().rename(value_name).reset_index()
    long.columns = ["country_iso3", "product_hs4", value_name]
    long.to_csv(path, index=False, lineterminator="\n")
