"""Loading and cleaning of firm-level transaction data.

The pipeline is: read transactions (concordance applied, bad rows rejected
with a reason), resolve each firm to its ultimate non-financial owner, merge
firms into owner-country entities, then drop entities that export across too
many HS Sections. Every dropped row is accounted for in :class:`IngestReport`.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .hs import is_hs4, section_of

log = logging.getLogger(__name__)

TRANSACTION_COLUMNS = ["supplier_id", "buyer_id", "product_hs4", "value_usd", "period"]
DEFAULT_WINDOW = ("2021-01", "2023-12")


class DataError(ValueError):
    """Input data that cannot be processed."""


class ConfigurationError(ValueError):
    """Static configuration (tables, thresholds) is incomplete or invalid."""


@dataclass(frozen=True)
class TransactionRecord:
    supplier_id: str
    buyer_id: str
    product: str
    value_usd: float
    period: str


@dataclass(frozen=True)
class FirmEntity:
    firm_id: str
    country: str
    is_financial: bool = False
    owner_id: str | None = None


@dataclass(frozen=True)
class OwnershipEdge:
    child_id: str
    parent_id: str
    share: float | None = None


class HSConcordance:
    """HS 2017 to HS 2022 mapping at the 4-digit level.

    Parameters
    ----------
    mapping : dict
        Source 4-digit code to target 4-digit code.
    hs2022_codes : iterable of str, optional
        The valid HS 2022 code list. Codes in this list are never remapped,
        which keeps :meth:`apply` idempotent. When omitted, any code whose
        chapter belongs to a Section is accepted as already valid.
    """

    def __init__(self, mapping: dict[str, str] | None = None, hs2022_codes=None):
        self.mapping = dict(mapping or {})
        for src, tgt in self.mapping.items():
            if not (is_hs4(src) and is_hs4(tgt)):
                raise ConfigurationError(f"concordance entry {src}->{tgt} is not 4-digit")
        if hs2022_codes is None:
            self.hs2022_codes = None
        else:
            self.hs2022_codes = set(hs2022_codes) | set(self.mapping.values())

    @classmethod
    def from_csv(cls, path, hs2022_codes=None) -> "HSConcordance":
        """Read a ``hs2017,hs2022`` table of 4- or 6-digit codes.

        Six-digit rows are truncated to 4 digits; when one 4-digit source fans
        out to several 4-digit targets the most frequent target wins, ties going
        to the smallest code.
        """
        counts: dict[str, Counter] = defaultdict(Counter)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"hs2017", "hs2022"} <= set(reader.fieldnames):
                raise DataError(f"{path}: expected header 'hs2017,hs2022'")
            for row in reader:
                src, tgt = row["hs2017"].strip(), row["hs2022"].strip()
                if len(src) not in (4, 6) or len(tgt) not in (4, 6) or not (src + tgt).isdigit():
                    raise DataError(f"{path}: malformed concordance row {row!r}")
                counts[src[:4]][tgt[:4]] += 1
        mapping = {
            src: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            for src, c in counts.items()
        }
        return cls(mapping, hs2022_codes)

    def is_valid(self, code: str) -> bool:
        if self.hs2022_codes is not None:
            return code in self.hs2022_codes
        return section_of(code) is not None

    def apply(self, code: str) -> str | None:
        if self.is_valid(code):
            return code
        return self.mapping.get(code)


@dataclass
class IngestReport:
    input_rows: int = 0
    rejected: dict = field(default_factory=dict)
    intra_owner_rows: int = 0
    multi_section_rows: int = 0
    multi_section_entities: int = 0
    output_rows: int = 0
    entities: int = 0

    @property
    def rejected_rows(self) -> int:
        return sum(self.rejected.values())

    def reconciles(self) -> bool:
        return self.input_rows == (
            self.output_rows + self.rejected_rows + self.intra_owner_rows + self.multi_section_rows
        )

    def add_rejects(self, reasons) -> None:
        for reason, n in Counter(reasons).items():
            self.rejected[reason] = self.rejected.get(reason, 0) + int(n)


@dataclass
class Transactions:
    """Validated transactions plus the rows that were rejected, with reasons."""

    frame: pd.DataFrame
    rejected: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    def records(self):
        for row in self.frame.itertuples(index=False):
            yield TransactionRecord(
                row.supplier_id, row.buyer_id, row.product, float(row.value_usd), row.period
            )


def _empty_frame() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "supplier_id": pd.Series(dtype=object),
            "buyer_id": pd.Series(dtype=object),
            "product": pd.Series(dtype=object),
            "value_usd": pd.Series(dtype=float),
            "period": pd.Series(dtype=object),
        }
    )


def load_transactions(
    path, concordance: HSConcordance | None = None, window=DEFAULT_WINDOW
) -> Transactions:
    """Read ``transactions.csv`` and validate each row.

    Rows are never silently dropped: each rejected row keeps its 1-based data
    line number and a reason (``missing field``, ``bad value``, ``negative
    value``, ``bad period``, ``outside window``, ``unknown HS code``).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    concordance = concordance or HSConcordance()
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None or [h.strip() for h in header] != TRANSACTION_COLUMNS:
        raise DataError(f"{path}: unparseable header {header!r}, expected {TRANSACTION_COLUMNS}")

    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True).fillna("")
    n = len(raw)
    reason = np.full(n, "", dtype=object)

    def reject(mask, why):
        mask = np.asarray(mask) & (reason == "")
        reason[mask] = why

    for col in TRANSACTION_COLUMNS:
        raw[col] = raw[col].str.strip()
    reject((raw[TRANSACTION_COLUMNS] == "").any(axis=1).to_numpy(), "missing field")

    value = pd.to_numeric(raw["value_usd"], errors="coerce").to_numpy(dtype=float)
    reject(~np.isfinite(value), "bad value")
    reject(value < 0, "negative value")

    period = raw["period"]
    reject(~period.str.fullmatch(r"\d{4}-(0[1-9]|1[0-2])").to_numpy(), "bad period")
    lo, hi = window
    reject(((period < lo) | (period > hi)).to_numpy(), "outside window")

    codes = raw["product_hs4"]
    lookup = {c: concordance.apply(c) for c in codes.unique()}
    mapped = codes.map(lookup)
    reject(mapped.isna().to_numpy(), "unknown HS code")

    ok = reason == ""
    frame = pd.DataFrame(
        {
            "supplier_id": raw["supplier_id"].to_numpy()[ok],
            "buyer_id": raw["buyer_id"].to_numpy()[ok],
            "product": mapped.to_numpy()[ok],
            "value_usd": value[ok],
            "period": period.to_numpy()[ok],
        }
    )
    if not len(frame):
        frame = _empty_frame()
    rejected = pd.DataFrame({"line": np.flatnonzero(~ok) + 1, "reason": reason[~ok]})
    if len(rejected):
        log.info("%s: rejected %d of %d rows", path, len(rejected), n)
    return Transactions(frame, rejected)


def load_firms(path) -> list[FirmEntity]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if not {"firm_id", "country", "is_financial"} <= set(df.columns):
        raise DataError(f"{path}: expected header 'firm_id,country,is_financial'")
    truthy = {"1", "true", "t", "yes", "y"}
    return [
        FirmEntity(r.firm_id, r.country, r.is_financial.strip().lower() in truthy)
        for r in df.itertuples(index=False)
    ]


def load_ownership(path) -> list[OwnershipEdge]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if not {"child_id", "parent_id"} <= set(df.columns):
        raise DataError(f"{path}: expected header 'child_id,parent_id,share'")
    shares = df["share"] if "share" in df.columns else pd.Series([""] * len(df))
    edges = []
    for child, parent, share in zip(df["child_id"], df["parent_id"], shares):
        edges.append(OwnershipEdge(child, parent, float(share) if share.strip() else None))
    return edges


def resolve_ownership(firms, edges) -> dict[str, str]:
    """Map every firm to its ultimate operational owner.

    Each firm keeps a single parent: the one with the largest declared share,
    falling back to the smallest parent id. Climbing stops before a parent
    flagged ``is_financial``. A firm caught in (or feeding into) an ownership
    cycle resolves to the smallest firm id on the cycle.
    """
    financial = {f.firm_id for f in firms if f.is_financial}
    best: dict[str, tuple] = {}
    for e in edges:
        if e.child_id == e.parent_id:
            continue
        key = (-(e.share if e.share is not None else -np.inf), e.parent_id)
        if e.child_id not in best or key < best[e.child_id][0]:
            best[e.child_id] = (key, e.parent_id)
    parent = {
        child: p for child, (_, p) in best.items() if p not in financial
    }

    nodes = {f.firm_id for f in firms} | set(best) | {p for _, p in best.values()}
    owner: dict[str, str] = {}
    for start in sorted(nodes):
        if start in owner:
            continue
        path: list[str] = []
        pos: dict[str, int] = {}
        node = start
        while True:
            if node in owner:
                top = owner[node]
                break
            if node in pos:
                top = min(path[pos[node]:])
                break
            pos[node] = len(path)
            path.append(node)
            nxt = parent.get(node)
            if nxt is None:
                top = node
                break
            node = nxt
        for v in path:
            owner[v] = top
    return owner


def assign_owners(firms, owners: dict[str, str]) -> list[FirmEntity]:
    return [
        FirmEntity(f.firm_id, f.country, f.is_financial, owners.get(f.firm_id, f.firm_id))
        for f in firms
    ]


def entity_key(owner_id: str, country: str) -> str:
    suffix = "@" + country
    return owner_id if owner_id.endswith(suffix) else owner_id + suffix


def aggregate_owner_country(firms, transactions: pd.DataFrame):
    """Merge firms into owner-country entities and re-key transactions.

    Returns ``(entities, frame, dropped)`` where ``dropped`` counts rows lost
    by reason: ``intra owner`` (both sides map to the same entity) and
    ``unknown firm`` (an id absent from ``firms``). Keys have the form
    ``owner@country`` and are stable under re-aggregation.
    """
    key_of = {}
    entities = {}
    for f in firms:
        owner = f.owner_id if f.owner_id is not None else f.firm_id
        k = entity_key(owner, f.country)
        key_of[f.firm_id] = k
        entities.setdefault(k, FirmEntity(k, f.country, False, k))

    sup = transactions["supplier_id"].map(key_of)
    buy = transactions["buyer_id"].map(key_of)
    unknown = (sup.isna() | buy.isna()).to_numpy()
    intra = ~unknown & (sup == buy).to_numpy()
    keep = ~unknown & ~intra
    out = transactions.loc[keep].copy()
    out["supplier_id"] = sup[keep].to_numpy()
    out["buyer_id"] = buy[keep].to_numpy()
    out.reset_index(drop=True, inplace=True)
    dropped = {"intra owner": int(intra.sum()), "unknown firm": int(unknown.sum())}
    return sorted(entities.values(), key=lambda e: e.firm_id), out, dropped


def filter_multi_section_firms(entities, transactions: pd.DataFrame, sections, max_sections=5):
    """Drop entities exporting in ``max_sections`` or more HS Sections.

    All transactions touching a dropped entity, as seller or buyer, go with
    it. Returns ``(entities, frame, dropped_ids)``.
    """
    products = transactions["product"].unique()
    missing = sorted(p for p in products if p not in sections)
    if missing:
        raise ConfigurationError(f"no HS Section for products: {', '.join(missing[:20])}")
    sec = transactions["product"].map(sections)
    n_sec = sec.groupby(transactions["supplier_id"]).nunique()
    dropped = set(n_sec.index[n_sec >= max_sections])
    keep = ~(transactions["supplier_id"].isin(dropped) | transactions["buyer_id"].isin(dropped))
    out = transactions.loc[keep].reset_index(drop=True)
    kept_entities = [e for e in entities if e.firm_id not in dropped]
    return kept_entities, out, dropped


@dataclass
class IngestResult:
    entities: list
    transactions: pd.DataFrame
    report: IngestReport

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(
            {"entity_id": [e.firm_id for e in self.entities], "country": [e.country for e in self.entities]}
        ).to_csv(out / "entities.csv", index=False, lineterminator="\n")
        self.transactions.rename(columns={"product": "product_hs4"}).to_csv(
            out / "transactions.csv", index=False, lineterminator="\n"
        )
        with open(out / "ingest_report.json", "w", encoding="utf-8") as fh:
            json.dump(asdict(self.report), fh, indent=2, sort_keys=True)
            fh.write("\n")


def ingest(
    transactions_path,
    firms_path,
    ownership_path=None,
    concordance: HSConcordance | None = None,
    sections: dict | None = None,
    window=DEFAULT_WINDOW,
    max_sections: int | None = 5,
) -> IngestResult:
    """Run the full cleaning chain on raw files."""
    report = IngestReport()
    tx = load_transactions(transactions_path, concordance, window)
    report.input_rows = len(tx.frame) + len(tx.rejected)
    report.add_rejects(tx.rejected["reason"])

    firms = load_firms(firms_path)
    edges = load_ownership(ownership_path) if ownership_path else []
    firms = assign_owners(firms, resolve_ownership(firms, edges))
    entities, frame, dropped = aggregate_owner_country(firms, tx.frame)
    report.intra_owner_rows = dropped["intra owner"]
    if dropped["unknown firm"]:
        report.add_rejects(["unknown firm"] * dropped["unknown firm"])

    if max_sections is not None:
        if sections is None:
            sections = {p: section_of(p) for p in frame["product"].unique() if section_of(p)}
        before = len(frame)
        entities, frame, gone = filter_multi_section_firms(entities, frame, sections, max_sections)
        report.multi_section_rows = before - len(frame)
        report.multi_section_entities = len(gone)

    report.output_rows = len(frame)
    report.entities = len(entities)
    assert report.reconciles()
    return IngestResult(entities, frame, report)


def read_clean_transactions(path) -> pd.DataFrame:
    """Read a ``transactions.csv`` written by :meth:`IngestResult.write`."""
    df = pd.read_csv(path, dtype={"supplier_id": str, "buyer_id": str, "product_hs4": str, "period": str})
    return df.rename(columns={"product_hs4": "product"})
