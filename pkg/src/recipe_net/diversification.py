"""Downstream/upstream density and Probit models of country-product entry."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import rankdata

from .network import ProductNetwork, largest_wcc

log = logging.getLogger(__name__)

PANEL_COLUMNS = ["product_hs4", "country_iso3", "entry", "down_density", "up_density", "rpop_base", "rpop_end"]


class ConvergenceWarning(UserWarning):
    pass


def top_neighbours(net: ProductNetwork, direction: str = "downstream", k: int = 50) -> sp.csr_matrix:
    """0/1 matrix whose row ``p`` marks the (up to) ``k`` heaviest neighbours of ``p``.

    Downstream neighbours are targets of out-edges, upstream ones sources of
    in-edges. Equal weights are ordered by HS code; self-loops are skipped.
    """
    a = net.adjacency(weighted=True)
    if direction == "upstream":
        a = a.T.tocsr()
    elif direction != "downstream":
        raise ValueError(f"unknown direction {direction!r}")
    a.sort_indices()
    rows, cols = [], []
    for p in range(net.n):
        lo, hi = a.indptr[p], a.indptr[p + 1]
        nb, w = a.indices[lo:hi], a.data[lo:hi]
        # node index order equals HS code order
        pick = nb[np.lexsort((nb, -w))[:k]]
        rows.extend([p] * len(pick))
        cols.extend(pick.tolist())
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(net.n, net.n))


def density(net: ProductNetwork, presence: pd.DataFrame, direction: str = "downstream", k: int = 50) -> pd.DataFrame:
    """Share of each product's top-``k`` neighbours present in each country.

    ``presence`` is a country x product 0/1 frame; neighbours missing from it
    count as absent. Returns a product x country frame, 0 where a product has
    no neighbours in that direction.
    """
    j = top_neighbours(net, direction, k)
    m = presence.reindex(columns=net.nodes, fill_value=0).to_numpy(dtype=float)
    counts = np.asarray(j.sum(axis=1)).ravel()
    hits = j @ m.T
    d = np.zeros_like(hits)
    np.divide(hits, counts[:, None], out=d, where=counts[:, None] > 0)
    return pd.DataFrame(d, index=net.nodes, columns=presence.index)


@dataclass
class EntryPanel:
    frame: pd.DataFrame
    stats: dict


def entry_panel(
    rpop_base: pd.DataFrame,
    rpop_end: pd.DataFrame,
    net: ProductNetwork,
    world_trade_base: pd.Series | None = None,
    absence_thr: float = 0.05,
    presence_thr: float = 0.1,
    trade_min_usd: float = 2e9,
    density_presence_thr: float = 1.0,
    k: int = 50,
) -> EntryPanel:
    """Country-product pairs absent in the base year, with their entry outcome.

    Products outside the network's main component, or with base-year world
    trade below ``trade_min_usd``, are dropped first. Densities use base-year
    presence (``Rpop >= density_presence_thr``) so the outcome cannot leak in.
    """
    main = largest_wcc(net)
    countries = sorted(set(rpop_base.index) & set(rpop_end.index))
    products = [p for p in main.nodes if p in rpop_base.columns and p in rpop_end.columns]
    if world_trade_base is not None:
        products = [p for p in products if world_trade_base.get(p, 0.0) >= trade_min_usd]
    if not products or not countries:
        raise ValueError("empty panel: no products or countries in common")
    base = rpop_base.loc[countries, products]
    end = rpop_end.loc[countries, products]

    presence = (rpop_base.loc[countries] >= density_presence_thr).astype(np.int8)
    down = density(main, presence, "downstream", k).loc[products, countries]
    up = density(main, presence, "upstream", k).loc[products, countries]

    long = pd.DataFrame(
        {
            "product_hs4": np.repeat(products, len(countries)),
            "country_iso3": np.tile(countries, len(products)),
            "rpop_base": base.T.to_numpy().ravel(),
            "rpop_end": end.T.to_numpy().ravel(),
            "down_density": down.to_numpy().ravel(),
            "up_density": up.to_numpy().ravel(),
        }
    )
    n_possible = len(long)
    sample = long[long["rpop_base"] < absence_thr].copy()
    if sample.empty:
        raise ValueError("empty sample: no pair is absent in the base year")
    sample["entry"] = (sample["rpop_end"] > presence_thr).astype(np.int8)
    sample = sample[PANEL_COLUMNS].reset_index(drop=True)
    stats = {
        "n_products": len(products),
        "n_countries": len(countries),
        "n_possible": n_possible,
        "n_absent": len(sample),
        "absent_share": len(sample) / n_possible,
        "n_entries": int(sample["entry"].sum()),
        "entry_rate": float(sample["entry"].mean()),
        "absence_thr": absence_thr,
        "presence_thr": presence_thr,
    }
    return EntryPanel(sample, stats)


def auc(scores, outcomes) -> float:
    """Probability that a random positive outscores a random negative; ties count 1/2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative outcome")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def probit_loglik(beta, x, y) -> float:
    q = 2.0 * y - 1.0
    return float(log_ndtr(q * (x @ beta)).sum())


def _inverse_mills(q, xb):
    # q * phi(q xb) / Phi(q xb), computed in log space
    z = q * xb
    return q * np.exp(-0.5 * z * z - 0.5 * np.log(2 * np.pi) - log_ndtr(z))


def probit_gradient(beta, x, y) -> np.ndarray:
    xb = x @ beta
    lam = _inverse_mills(2.0 * y - 1.0, xb)
    return np.asarray(x.T @ lam).ravel()


def probit_hessian(beta, x, y) -> np.ndarray:
    xb = x @ beta
    lam = _inverse_mills(2.0 * y - 1.0, xb)
    w = lam * (lam + xb)
    if sp.issparse(x):
        h = (x.T @ x.multiply(w[:, None])).toarray()
    else:
        h = x.T @ (x * w[:, None])
    return -h


def independent_columns(gram: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Greedy left-to-right column selection keeping a full-rank Gram matrix."""
    keep: list[int] = []
    chol = np.zeros((0, 0))
    for c in range(gram.shape[0]):
        gcc = gram[c, c]
        if gcc <= 0:
            continue
        if keep:
            g = gram[keep, c]
            y = solve_triangular(chol, g, lower=True)
            r = gcc - y @ y
        else:
            y = np.zeros(0)
            r = gcc
        if r <= tol * gcc:
            continue
        m = len(keep)
        new = np.zeros((m + 1, m + 1))
        new[:m, :m] = chol
        new[m, :m] = y
        new[m, m] = np.sqrt(r)
        chol = new
        keep.append(c)
    return keep


@dataclass
class ProbitFit:
    coef: pd.Series
    se: pd.Series
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    n_obs: int
    auc: float | None
    dropped_groups: dict = field(default_factory=dict)
    dropped_columns: list = field(default_factory=list)
    regressors: list = field(default_factory=list)
    fixed_effects: bool = False

    def linear_predictor(self, frame: pd.DataFrame) -> np.ndarray:
        """Index ``alpha + x beta + gamma_p + eta_c`` for arbitrary rows.

        Fixed effects of groups not seen in estimation fall back to the mean
        estimated effect of their kind (reference level counted as 0); groups
        dropped for all-0 or all-1 outcomes take the minimum or maximum.
        """
        c = self.coef
        xb = np.full(len(frame), c.get("const", 0.0))
        for r in self.regressors:
            xb = xb + c.get(r, 0.0) * frame[r].to_numpy(dtype=float)
        if self.fixed_effects:
            for kind, col in (("product", "product_hs4"), ("country", "country_iso3")):
                prefix = f"{kind}:"
                eff = {k[len(prefix):]: v for k, v in c.items() if k.startswith(prefix)}
                ref = self.dropped_groups.get(f"{kind}_reference")
                if ref is not None:
                    eff.setdefault(ref, 0.0)
                vals = np.array(list(eff.values())) if eff else np.zeros(1)
                fill = {g: vals.min() for g in self.dropped_groups.get(f"{kind}_all_zero", [])}
                fill.update({g: vals.max() for g in self.dropped_groups.get(f"{kind}_all_one", [])})
                fill.update(eff)
                xb = xb + frame[col].map(fill).fillna(vals.mean()).to_numpy(dtype=float)
        return xb

    def predict(self, frame: pd.DataFrame) -> np.ndarray:
        return ndtr(self.linear_predictor(frame))

    def to_dict(self) -> dict:
        core = [k for k in self.coef.index if ":" not in k]
        return {
            "coefficients": {k: float(self.coef[k]) for k in core},
            "standard_errors": {k: float(self.se[k]) for k in core},
            "n_fixed_effects": int(len(self.coef) - len(core)),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "n_obs": self.n_obs,
            "auc_in_sample": self.auc,
            "dropped_groups": {k: (v if isinstance(v, (str, type(None))) else len(v)) for k, v in self.dropped_groups.items()},
            "dropped_columns": self.dropped_columns,
        }


def _drop_perfect_groups(frame: pd.DataFrame, outcome: str):
    dropped = {"product_all_zero": [], "product_all_one": [], "country_all_zero": [], "country_all_one": []}
    while True:
        changed = False
        for kind, col in (("product", "product_hs4"), ("country", "country_iso3")):
            mean = frame.groupby(col)[outcome].mean()
            zero, one = list(mean.index[mean == 0]), list(mean.index[mean == 1])
            if zero or one:
                dropped[f"{kind}_all_zero"] += zero
                dropped[f"{kind}_all_one"] += one
                frame = frame[~frame[col].isin(zero + one)]
                changed = True
        if not changed or frame.empty:
            return frame, dropped


def design_matrix(frame: pd.DataFrame, regressors, fixed_effects: bool):
    n = len(frame)
    blocks = [sp.csr_matrix(np.ones((n, 1)))]
    names = ["const"]
    if regressors:
        blocks.append(sp.csr_matrix(frame[list(regressors)].to_numpy(dtype=float)))
        names += list(regressors)
    refs = {}
    if fixed_effects:
        for kind, col in (("product", "product_hs4"), ("country", "country_iso3")):
            codes, levels = pd.factorize(frame[col], sort=True)
            refs[f"{kind}_reference"] = levels[0] if len(levels) else None
            # first level is the reference
            mask = codes > 0
            d = sp.csr_matrix(
                (np.ones(mask.sum()), (np.flatnonzero(mask), codes[mask] - 1)), shape=(n, max(len(levels) - 1, 0))
            )
            blocks.append(d)
            names += [f"{kind}:{lv}" for lv in levels[1:]]
    return sp.hstack(blocks, format="csr"), names, refs


def probit_fit(
    panel,
    regressors=("down_density",),
    fixed_effects: bool = False,
    outcome: str = "entry",
    max_iter: int = 100,
    tol: float = 1e-8,
    max_coef: float = 40.0,
) -> ProbitFit:
    """Maximum-likelihood Probit by damped Newton iterations.

    With fixed effects, products and countries whose outcomes are all 0 or
    all 1 are dropped first (repeatedly, until none remain). Columns that are
    linearly dependent on earlier ones are dropped with a warning. When the
    gradient max-norm does not fall below ``tol`` within ``max_iter`` steps,
    or a coefficient runs past ``max_coef`` (separation), the fit is returned
    with ``converged=False``.
    """
    frame = panel.frame if hasattr(panel, "frame") else panel
    regressors = list(regressors or [])
    if frame.empty:
        raise ValueError("empty panel")
    if not np.isfinite(frame[regressors].to_numpy(dtype=float)).all():
        raise ValueError("non-finite regressor values")
    dropped = {}
    if fixed_effects:
        frame, dropped = _drop_perfect_groups(frame, outcome)
        if frame.empty:
            raise ValueError("every group has a constant outcome")
    x, names, refs = design_matrix(frame, regressors, fixed_effects)
    dropped.update(refs)
    y = frame[outcome].to_numpy(dtype=float)

    gram = (x.T @ x).toarray()
    keep = independent_columns(gram)
    dropped_cols = [names[c] for c in range(len(names)) if c not in set(keep)]
    if dropped_cols:
        warnings.warn(f"dropping collinear columns: {dropped_cols[:10]}", stacklevel=2)
        x = x[:, keep]
        names = [names[c] for c in keep]
    if x.shape[1] <= 60:
        x = x.toarray()

    beta = np.zeros(x.shape[1])
    ybar = y.mean()
    if 0 < ybar < 1:
        beta[0] = ndtri(ybar)
    ll = probit_loglik(beta, x, y)
    converged = False
    it = 0
    g = probit_gradient(beta, x, y)
    for it in range(1, max_iter + 1):
        if np.abs(g).max() < tol:
            converged = True
            it -= 1
            break
        h = probit_hessian(beta, x, y)
        try:
            step = np.linalg.solve(-h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-h, g, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            ll_c = probit_loglik(cand, x, y)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = cand, ll_c
        g = probit_gradient(beta, x, y)
        if np.abs(beta).max() > max_coef:
            break
    else:
        converged = np.abs(g).max() < tol
    if not converged:
        warnings.warn("Probit did not converge (possible separation)", ConvergenceWarning, stacklevel=2)

    h = probit_hessian(beta, x, y)
    try:
        cov = np.linalg.inv(-h)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(len(beta), np.nan)
    xb = x @ beta
    try:
        fit_auc = auc(xb, y)
    except ValueError:
        fit_auc = None
    return ProbitFit(
        pd.Series(beta, index=names),
        pd.Series(se, index=names),
        ll,
        bool(converged),
        it,
        float(np.abs(g).max()),
        len(y),
        fit_auc,
        dropped,
        dropped_cols,
        regressors,
        fixed_effects,
    )


def grouped_cv_auc(
    panel, regressors=("down_density",), fixed_effects: bool = False, folds: int = 5, outcome: str = "entry"
) -> float | None:
    """Held-out AUC with countries split into ``folds`` groups (sorted, round-robin)."""
    frame = panel.frame if hasattr(panel, "frame") else panel
    countries = sorted(frame["country_iso3"].unique())
    fold_of = {c: k % folds for k, c in enumerate(countries)}
    fold = frame["country_iso3"].map(fold_of).to_numpy()
    scores = np.full(len(frame), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(folds):
            test = fold == k
            train = frame[~test]
            if test.sum() == 0 or train[outcome].nunique() < 2:
                continue
            fit = probit_fit(train, regressors, fixed_effects, outcome)
            scores[test] = fit.linear_predictor(frame[test])
    ok = ~np.isnan(scores)
    y = frame[outcome].to_numpy()[ok]
    if y.min() == y.max():
        return None
    return auc(scores[ok], y)


def threshold_sweep(make_network, make_panel, firmcounts, presence_thresholds, regressors=("down_density",), fixed_effects=False):
    """AUC grid over network firmcount and entry presence threshold.

    ``make_network(firmcount)`` returns a :class:`ProductNetwork` and
    ``make_panel(net, presence_thr)`` an :class:`EntryPanel` built on it.
    """
    firmcounts, presence_thresholds = list(firmcounts), list(presence_thresholds)
    if not firmcounts or not presence_thresholds:
        raise ValueError("empty sweep range")
    rows = []
    for fc in firmcounts:
        net = make_network(fc)
        for thr in presence_thresholds:
            panel = make_panel(net, thr)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                fit = probit_fit(panel, regressors, fixed_effects)
            rows.append(
                {
                    "firmcount": fc,
                    "presence_thr": thr,
                    "n_obs": fit.n_obs,
                    "entry_rate": panel.stats["entry_rate"],
                    "beta": float(fit.coef.get(regressors[0], np.nan)) if regressors else np.nan,
                    "auc": fit.auc,
                }
            )
    return pd.DataFrame(rows)
