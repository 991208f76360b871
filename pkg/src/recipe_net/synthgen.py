"""Synthetic firm worlds with planted recipes, and synthetic trade panels.

A world has one primary product per ordinary firm. Producers of ``j`` buy
each planted input of ``j`` with probability equal to its intensity, every
firm buys the ubiquitous "common inputs" with a high probability, and a few
background purchases add noise. Wholesalers sell and buy a large basket of
products across many HS Sections. Sellers are drawn proportionally to firm
size among producers of the product located in another country.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .hs import CHAPTER_SECTION, write_sections

_CHAPTERS = sorted(ch for ch in CHAPTER_SECTION if ch != 77)


@dataclass
class WorldSpec:
    n_products: int = 150
    n_countries: int = 20
    firms_per_product: int = 30
    inputs_per_product: int = 5
    intensity_range: tuple = (0.5, 1.0)
    same_section_share: float = 0.6
    planted_recipes: dict | None = None
    common_inputs: int = 3
    common_input_prob: float = 0.95
    background_purchases: float = 2.0
    tx_per_purchase: float = 1.0
    multi_product_rate: float = 0.01
    wholesaler_products: int = 20
    wholesaler_size: float = 1.0
    country_zipf: float = 1.1
    value_mu: float = 9.0
    value_sigma: float = 1.0
    size_sigma: float = 0.3
    ownership_rate: float = 0.05
    financial_owner_rate: float = 0.3
    ownership_cycles: int = 2
    hs2017_products: int = 3
    hs2017_rate: float = 0.5
    window: tuple = ("2021-01", "2023-12")
    seed: int = 7

    def __post_init__(self):
        lo, hi = self.intensity_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError("intensities must lie in [0, 1]")
        for name in ("same_section_share", "common_input_prob", "multi_product_rate",
                     "ownership_rate", "financial_owner_rate", "hs2017_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be a probability, got {v}")
        for target, inputs in (self.planted_recipes or {}).items():
            if any(not 0 <= float(w) <= 1 for _, w in inputs):
                raise ValueError(f"planted intensities for {target} must lie in [0, 1]")
        if self.n_countries < 2:
            raise ValueError("cross-border trade needs at least 2 countries")
        self.intensity_range = tuple(self.intensity_range)
        self.window = tuple(self.window)

    @classmethod
    def from_json(cls, path) -> "WorldSpec":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown WorldSpec keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")


def product_codes(n: int) -> list[str]:
    """``n`` distinct 4-digit codes spread round-robin over the HS chapters."""
    if n > len(_CHAPTERS) * 89:
        raise ValueError("too many products")
    return sorted(f"{_CHAPTERS[k % len(_CHAPTERS)]:02d}{k // len(_CHAPTERS) + 1:02d}" for k in range(n))


@dataclass
class World:
    spec: WorldSpec
    products: list
    firms: pd.DataFrame
    ownership: pd.DataFrame
    transactions: pd.DataFrame
    truth: pd.DataFrame
    sections: dict
    concordance: pd.DataFrame
    common: list = field(default_factory=list)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "firms": out / "firms.csv",
            "ownership": out / "ownership.csv",
            "transactions": out / "transactions.csv",
            "truth": out / "truth_edges.csv",
            "sections": out / "hs_sections.csv",
            "concordance": out / "hs_concordance.csv",
        }
        self.firms.to_csv(paths["firms"], index=False, lineterminator="\n")
        self.ownership.to_csv(paths["ownership"], index=False, lineterminator="\n")
        self.transactions.to_csv(paths["transactions"], index=False, lineterminator="\n")
        self.truth.to_csv(paths["truth"], index=False, lineterminator="\n")
        self.concordance.to_csv(paths["concordance"], index=False, lineterminator="\n")
        write_sections(paths["sections"], self.sections)
        with open(out / "common_inputs.txt", "w", encoding="utf-8") as fh:
            fh.write("".join(p + "\n" for p in self.common))
        return {k: str(v) for k, v in paths.items()}


def _plant_recipes(spec: WorldSpec, codes, sections, rng) -> list[tuple[str, str, float]]:
    if spec.planted_recipes is not None:
        rows = []
        for target, inputs in spec.planted_recipes.items():
            for source, intensity in inputs:
                rows.append((str(source), str(target), float(intensity)))
        return rows
    by_section: dict[int, list[int]] = {}
    for k, c in enumerate(codes):
        by_section.setdefault(sections[c], []).append(k)
    rows = []
    n = len(codes)
    lo, hi = spec.intensity_range
    for j in range(n):
        same = [k for k in by_section[sections[codes[j]]] if k != j]
        chosen: set[int] = set()
        while len(chosen) < min(spec.inputs_per_product, n - 1):
            if same and rng.random() < spec.same_section_share and len(set(same) - chosen) > 0:
                pool = [k for k in same if k not in chosen]
            else:
                pool = [k for k in range(n) if k != j and k not in chosen]
            chosen.add(int(pool[rng.integers(len(pool))]))
        for i in sorted(chosen):
            rows.append((codes[i], codes[j], float(rng.uniform(lo, hi))))
    return rows


def _months(window) -> list[str]:
    (y0, m0), (y1, m1) = (map(int, w.split("-")) for w in window)
    out = []
    y, m = y0, m0
    while (y, m) <= (y1, m1):
        out.append(f"{y:04d}-{m:02d}")
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


def generate_world(spec: WorldSpec) -> World:
    rng = np.random.default_rng(spec.seed)
    codes = product_codes(spec.n_products)
    n_prod = len(codes)
    sections = {c: CHAPTER_SECTION[int(c[:2])] for c in codes}
    truth_rows = _plant_recipes(spec, codes, sections, rng)
    pos = {c: k for k, c in enumerate(codes)}
    recipe: list[list[tuple[int, float]]] = [[] for _ in range(n_prod)]
    for s, t, w in truth_rows:
        recipe[pos[t]].append((pos[s], w))
    common = sorted(rng.choice(n_prod, size=min(spec.common_inputs, n_prod), replace=False).tolist())

    countries = [f"C{k:02d}" for k in range(spec.n_countries)]
    zipf = 1.0 / np.arange(1, spec.n_countries + 1) ** spec.country_zipf
    zipf /= zipf.sum()

    # ordinary firms: one primary product each
    primary = np.repeat(np.arange(n_prod), spec.firms_per_product)
    n_ord = len(primary)
    n_whole = int(round(spec.multi_product_rate * n_ord))
    n_firms = n_ord + n_whole
    country = rng.choice(spec.n_countries, size=n_firms, p=zipf)
    size = rng.lognormal(0.0, spec.size_sigma, size=n_firms)
    size[n_ord:] *= spec.wholesaler_size
    baskets = [
        np.sort(rng.choice(n_prod, size=min(spec.wholesaler_products, n_prod), replace=False))
        for _ in range(n_whole)
    ]
    firm_ids = np.array([f"F{k:06d}" for k in range(n_firms)], dtype=object)

    # who sells what
    sellers: list[list[int]] = [[] for _ in range(n_prod)]
    for f in range(n_ord):
        sellers[primary[f]].append(f)
    for w, basket in enumerate(baskets):
        for p in basket:
            sellers[p].append(n_ord + w)
    sellers_arr = [np.array(s, dtype=np.int64) for s in sellers]

    # purchase decisions (buyer, product, scale)
    buy_f, buy_p, buy_scale = [], [], []
    for f in range(n_ord):
        for i, w in recipe[primary[f]]:
            if rng.random() < w:
                buy_f.append(f), buy_p.append(i), buy_scale.append(1.0)
    f_all = np.arange(n_firms)
    for u in common:
        take = f_all[rng.random(n_firms) < spec.common_input_prob]
        buy_f.extend(take.tolist())
        buy_p.extend([u] * len(take))
        buy_scale.extend([1.0] * len(take))
    n_bg = rng.poisson(spec.background_purchases, size=n_ord)
    for f in range(n_ord):
        for p in rng.choice(n_prod, size=n_bg[f], replace=True):
            buy_f.append(f), buy_p.append(int(p)), buy_scale.append(0.5)
    for w, basket in enumerate(baskets):
        for p in basket:
            buy_f.append(n_ord + w), buy_p.append(int(p)), buy_scale.append(1.0)

    buy_f = np.array(buy_f, dtype=np.int64)
    buy_p = np.array(buy_p, dtype=np.int64)
    buy_scale = np.array(buy_scale)
    n_tx = 1 + rng.poisson(spec.tx_per_purchase, size=len(buy_f))
    tb = np.repeat(buy_f, n_tx)
    tp = np.repeat(buy_p, n_tx)
    tscale = np.repeat(buy_scale, n_tx)

    # sellers by size, cross-border only
    ts = np.full(len(tb), -1, dtype=np.int64)
    order = np.argsort(tp, kind="stable")
    bounds = np.searchsorted(tp[order], np.arange(n_prod + 1))
    for p in range(n_prod):
        rows = order[bounds[p] : bounds[p + 1]]
        cand = sellers_arr[p]
        if len(rows) == 0 or len(cand) == 0:
            continue
        cum = np.cumsum(size[cand])
        pending = rows
        for _ in range(20):
            pick = cand[np.searchsorted(cum, rng.random(len(pending)) * cum[-1], side="right").clip(max=len(cand) - 1)]
            ok = (country[pick] != country[tb[pending]]) & (pick != tb[pending])
            ts[pending[ok]] = pick[ok]
            pending = pending[~ok]
            if len(pending) == 0:
                break
    keep = ts >= 0
    tb, tp, ts, tscale = tb[keep], tp[keep], ts[keep], tscale[keep]
    values = np.round(size[tb] * tscale * rng.lognormal(spec.value_mu, spec.value_sigma, size=len(tb)), 2)
    months = _months(spec.window)
    period = np.array(months, dtype=object)[rng.integers(len(months), size=len(tb))]

    # a few products still reported under an older code
    product_out = np.array(codes, dtype=object)[tp]
    conc_rows = []
    renamed = rng.choice(n_prod, size=min(spec.hs2017_products, n_prod), replace=False)
    used = set(codes)
    for p in sorted(renamed.tolist()):
        ch = codes[p][:2]
        old = next(f"{ch}{h:02d}" for h in range(99, 0, -1) if f"{ch}{h:02d}" not in used)
        used.add(old)
        conc_rows.append((old + "10", codes[p] + "10"))
        conc_rows.append((old + "20", codes[p] + "90"))
        decoy = codes[(p + 1) % n_prod]
        conc_rows.append((old + "30", decoy + "00"))
        rows = np.flatnonzero((tp == p) & (period < "2022-01"))
        swap = rows[rng.random(len(rows)) < spec.hs2017_rate]
        product_out[swap] = old

    transactions = pd.DataFrame(
        {
            "supplier_id": firm_ids[ts],
            "buyer_id": firm_ids[tb],
            "product_hs4": product_out,
            "value_usd": values,
            "period": period,
        }
    )

    firms = pd.DataFrame(
        {"firm_id": firm_ids, "country": np.array(countries, dtype=object)[country], "is_financial": False}
    )
    own_rows, holding_rows = _ownership(spec, rng, firm_ids, country, countries)
    if holding_rows:
        firms = pd.concat([firms, pd.DataFrame(holding_rows)], ignore_index=True)
    firms["is_financial"] = firms["is_financial"].map({True: "true", False: "false"})
    ownership = pd.DataFrame(own_rows, columns=["child_id", "parent_id", "share"])

    truth = pd.DataFrame(truth_rows, columns=["source_hs4", "target_hs4", "intensity"])
    truth = truth.sort_values(["source_hs4", "target_hs4"]).reset_index(drop=True)
    concordance = pd.DataFrame(conc_rows, columns=["hs2017", "hs2022"])
    return World(spec, codes, firms, ownership, transactions, truth, sections, concordance, [codes[u] for u in common])


def _ownership(spec, rng, firm_ids, country, countries):
    """Holding companies above a share of firms, some financial, a few cycles."""
    rows, holdings = [], []
    n = len(firm_ids)
    owned = np.flatnonzero(rng.random(n) < spec.ownership_rate)
    rng.shuffle(owned)
    k = 0
    h = 0
    while k < len(owned):
        group = owned[k : k + int(rng.integers(1, 4))]
        k += len(group)
        hid = f"H{h:05d}"
        h += 1
        fin = bool(rng.random() < spec.financial_owner_rate)
        holdings.append({"firm_id": hid, "country": countries[country[group[0]]], "is_financial": fin})
        for f in group:
            share = "" if rng.random() < 0.3 else f"{rng.uniform(0.5, 1.0):.3f}"
            rows.append((firm_ids[f], hid, share))
    for c in range(min(spec.ownership_cycles, max(h - 1, 0) // 2)):
        a, b = f"H{2 * c:05d}", f"H{2 * c + 1:05d}"
        rows.append((a, b, ""))
        rows.append((b, a, ""))
    return rows, holdings


def score_recovery(inferred: pd.DataFrame, truth: pd.DataFrame) -> dict:
    """Precision, recall and F1 of inferred edges against planted ones.

    Also reports the rank correlation between inferred weight and planted
    intensity over the correctly recovered edges. With no inferred edges the
    precision is reported as 0 and flagged.
    """
    from .trade import spearman

    inf = {(s, t): w for s, t, w in zip(inferred["source_hs4"], inferred["target_hs4"], inferred["weight"])}
    tru = {(s, t): w for s, t, w in zip(truth["source_hs4"], truth["target_hs4"], truth["intensity"])}
    tp = set(inf) & set(tru)
    out = {
        "n_inferred": len(inf),
        "n_truth": len(tru),
        "true_positives": len(tp),
        "precision_undefined": not inf,
        "precision": len(tp) / len(inf) if inf else 0.0,
        "recall": len(tp) / len(tru) if tru else 0.0,
    }
    p, r = out["precision"], out["recall"]
    out["f1"] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    pairs = sorted(tp)
    out["weight_intensity_spearman"] = (
        spearman([inf[e] for e in pairs], [tru[e] for e in pairs]) if len(pairs) >= 3 else None
    )
    return out


@dataclass
class TradeWorld:
    base: pd.DataFrame
    end: pd.DataFrame
    population: pd.Series
    latent_entry: pd.DataFrame

    def write(self, out_dir, base_year: int = 2016, end_year: int = 2021) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, mat, year in (("trade_base", self.base, base_year), ("trade_end", self.end, end_year)):
            long = mat.stack().rename("export_usd").reset_index()
            long.columns = ["country_iso3", "product_hs4", "export_usd"]
            long.insert(2, "year", year)
            long = long[long["export_usd"] > 0]
            paths[name] = out / f"{name}.csv"
            long.to_csv(paths[name], index=False, lineterminator="\n")
        pop = pd.DataFrame(
            {
                "country_iso3": np.repeat(self.population.index.to_numpy(), 2),
                "year": np.tile([base_year, end_year], len(self.population)),
                "population": np.repeat(self.population.to_numpy(), 2),
            }
        )
        paths["population"] = out / "population.csv"
        pop.to_csv(paths["population"], index=False, lineterminator="\n")
        return {k: str(v) for k, v in paths.items()}


def generate_trade(
    products,
    downstream,
    n_countries: int = 150,
    base_presence: float = 0.15,
    alpha: float = -1.8,
    beta: float = 4.0,
    entry_log_mu: float = -0.5,
    entry_log_sigma: float = 1.2,
    seed: int = 0,
    trade_scale: float = 1e10,
) -> TradeWorld:
    """Two-year export panel where entry depends on downstream presence.

    ``downstream`` maps each product to the list of its downstream neighbours.
    Base-year presence is drawn per country with a country-specific diversity;
    an absent pair ``(p, c)`` enters with probability ``Phi(alpha + beta * d)``
    where ``d`` is the share of ``p``'s neighbours present in ``c``. Entry
    sizes are log-normal in Rpop units, independent of ``d``. A rest-of-world
    row absorbs the remainder so world per-capita exports match the intended
    Rpop scale.
    """
    rng = np.random.default_rng(seed)
    products = list(products)
    n_prod = len(products)
    pos = {p: k for k, p in enumerate(products)}
    countries = [f"K{c:03d}" for c in range(n_countries)]
    pop = rng.lognormal(16.0, 1.5, size=n_countries)

    diversity = np.clip(rng.beta(2, 2 / base_presence - 2, size=n_countries), 0.01, 0.9)
    present = rng.random((n_countries, n_prod)) < diversity[:, None]
    r_base = np.where(present, rng.lognormal(0.7, 0.6, size=present.shape), 0.0)
    low = ~present & (rng.random(present.shape) < 0.2)
    r_base[low] = rng.uniform(0.0, 0.05, size=low.sum())

    nb = np.zeros((n_prod, n_prod))
    for p, targets in downstream.items():
        for t in targets:
            if p in pos and t in pos and p != t:
                nb[pos[p], pos[t]] = 1.0
    deg = nb.sum(axis=1)
    m = (r_base >= 1.0).astype(float)
    d = np.zeros((n_countries, n_prod))
    np.divide(m @ nb.T, deg[None, :], out=d, where=deg[None, :] > 0)

    absent = r_base < 0.05
    enters = absent & (rng.random(absent.shape) < ndtr(alpha + beta * d))
    r_end = r_base * rng.lognormal(0.0, 0.1, size=r_base.shape)
    r_end[absent] = np.minimum(r_base[absent], 0.05)
    r_end[enters] = rng.lognormal(entry_log_mu, entry_log_sigma, size=enters.sum())

    scale = trade_scale * rng.lognormal(0.0, 1.0, size=n_prod)

    def to_exports(r):
        row_pop = 4.0 * pop.sum()
        world_pop = pop.sum() + row_pop
        # per-capita level that makes Rpop equal r for listed countries
        need = world_pop - (pop[:, None] * r).sum(axis=0)
        r_row = np.clip(need / row_pop, 0.0, None)
        world_pc = scale / world_pop
        e = pop[:, None] * r * world_pc[None, :]
        e_row = row_pop * r_row * world_pc
        mat = pd.DataFrame(np.vstack([e, e_row]), index=countries + ["ROW"], columns=products)
        return mat, row_pop

    base, row_pop = to_exports(r_base)
    end, _ = to_exports(r_end)
    population = pd.Series(np.append(pop, row_pop), index=countries + ["ROW"])
    latent = pd.DataFrame(enters.astype(np.int8), index=countries, columns=products)
    return TradeWorld(base, end, population, latent)


def world_summary(world: World) -> dict:
    return {
        "products": len(world.products),
        "firms": int((world.firms["firm_id"].str.startswith("F")).sum()),
        "holdings": int((world.firms["firm_id"].str.startswith("H")).sum()),
        "transactions": len(world.transactions),
        "truth_edges": len(world.truth),
        "common_inputs": world.common,
        "value_total": float(math.fsum(world.transactions["value_usd"])),
    }
