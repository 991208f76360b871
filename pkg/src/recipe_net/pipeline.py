"""Declarative configuration and the end-to-end run.

A run directory has a fixed layout::

    config.resolved.json  manifest.json
    synth/          generated world, when the config asks for one
    ingest/         entities.csv, transactions.csv, ingest_report.json
    edges.csv  network.json  nodes.csv  partitions.json
    subgraph/<name>.json
    trade/          rca.csv, rpop.csv, presence.csv
    predict/        panel.csv, results.json
    recovery.json   when planted truth is available

Everything except the wall-times in ``manifest.json`` is a pure function of
the configuration and the input bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
import warnings
from contextlib import contextmanager
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import __version__
from .communities import stability_scan, time_grid
from .diversification import ConvergenceWarning, entry_panel, grouped_cv_auc, probit_fit
from .hs import load_sections
from .ingest import HSConcordance, ingest, read_clean_transactions
from .network import ProductNetwork, centrality_report, goods_classification_join, largest_wcc, write_nodes
from .recipe import ProducerBuyerIndex, build_edge_list, write_edges
from .significance import null_ensemble_pvalue, read_node_list
from .synthgen import WorldSpec, generate_trade, generate_world, score_recovery
from .trade import TradeMatrix, load_population, load_trade, presence_matrix, write_matrix

log = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InputsConfig(_Section):
    transactions: str | None = None
    firms: str | None = None
    ownership: str | None = None
    concordance: str | None = None
    sections: str | None = None
    goods_classes: str | None = None
    sector_lists: dict[str, str] = Field(default_factory=dict)
    trade_base: str | None = None
    trade_end: str | None = None
    population: str | None = None
    base_year: int | None = None
    end_year: int | None = None
    truth_edges: str | None = None


class SynthConfig(_Section):
    enabled: bool = False
    spec: str | None = None
    overrides: dict = Field(default_factory=dict)
    trade: bool = True
    trade_seed: int = 0
    trade_countries: int = 150


class IngestConfig(_Section):
    window: tuple[str, str] = ("2021-01", "2023-12")
    max_sections: int | None = 5


class InferConfig(_Section):
    weight_threshold: float = 2.0
    firmcount: int = Field(2, ge=1)
    value_min: float = 1000.0


class AnalyzeConfig(_Section):
    weighted_paths: bool = False


class CommunitiesConfig(_Section):
    enabled: bool = True
    tmin: float = Field(0.1, gt=0)
    tmax: float = 100.0
    steps: int = Field(40, ge=1)
    iterations: int = Field(100, ge=1)
    seed: int = 7
    teleport: float = Field(0.15, ge=0, lt=1)


class SignificanceConfig(_Section):
    samples: int = Field(100_000, ge=1)
    seed: int = 7
    weighted: bool = False


class PredictConfig(_Section):
    direction: Literal["downstream", "upstream", "both"] = "downstream"
    fixed_effects: bool = False
    absence_thr: float = 0.05
    presence_thr: float = 0.1
    trade_min_usd: float = 2e9
    density_presence_thr: float = 1.0
    k: int = Field(50, ge=1)
    folds: int = Field(5, ge=2)


class PipelineConfig(_Section):
    out: str = "run"
    threads: int | None = None
    inputs: InputsConfig = Field(default_factory=InputsConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    infer: InferConfig = Field(default_factory=InferConfig)
    analyze: AnalyzeConfig = Field(default_factory=AnalyzeConfig)
    communities: CommunitiesConfig = Field(default_factory=CommunitiesConfig)
    significance: SignificanceConfig = Field(default_factory=SignificanceConfig)
    predict: PredictConfig = Field(default_factory=PredictConfig)

    @field_validator("threads")
    @classmethod
    def _positive(cls, v):
        if v is not None and v < 1:
            raise ValueError("threads must be >= 1")
        return v

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        """Read a JSON config; relative input paths are taken from its directory."""
        with open(path, encoding="utf-8") as fh:
            cfg = cls.model_validate(json.load(fh))
        base = Path(path).resolve().parent

        def rebase(p):
            return p if p is None or Path(p).is_absolute() else str(base / p)

        for name in InputsConfig.model_fields:
            v = getattr(cfg.inputs, name)
            if isinstance(v, str):
                setattr(cfg.inputs, name, rebase(v))
        cfg.inputs.sector_lists = {k: rebase(v) for k, v in cfg.inputs.sector_lists.items()}
        cfg.synth.spec = rebase(cfg.synth.spec)
        return cfg

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def regressors_for(direction: str) -> list[str]:
    return {"downstream": ["down_density"], "upstream": ["up_density"], "both": ["down_density", "up_density"]}[
        direction
    ]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def missing_inputs(cfg: PipelineConfig) -> list[str]:
    """Every configured input path that does not exist, checked up front."""
    inp = cfg.inputs
    problems = []
    if not cfg.synth.enabled:
        for name in ("transactions", "firms"):
            if getattr(inp, name) is None:
                problems.append(f"inputs.{name}: required unless synth.enabled")
    elif cfg.synth.spec is not None and not Path(cfg.synth.spec).is_file():
        problems.append(f"synth.spec: no such file {cfg.synth.spec}")
    for name in ("transactions", "firms", "ownership", "concordance", "sections", "goods_classes",
                 "trade_base", "trade_end", "population", "truth_edges"):
        p = getattr(inp, name)
        if p is not None and not Path(p).is_file():
            problems.append(f"inputs.{name}: no such file {p}")
    for name, p in inp.sector_lists.items():
        if not Path(p).is_file():
            problems.append(f"inputs.sector_lists.{name}: no such file {p}")
    trade = [inp.trade_base, inp.trade_end, inp.population]
    if any(trade) and not all(trade):
        problems.append("inputs.trade_base, trade_end and population must be given together")
    return problems


class InputError(FileNotFoundError):
    """One or more configured inputs are missing."""


class _Timer:
    def __init__(self):
        self.times: dict[str, float] = {}

    @contextmanager
    def stage(self, name):
        log.info("stage %s", name)
        t0 = time.perf_counter()
        yield
        self.times[name] = round(time.perf_counter() - t0, 3)


def run_pipeline(cfg: PipelineConfig, out: str | Path | None = None) -> dict:
    """Run every configured stage and return the manifest.

    Raises :class:`InputError` listing all missing inputs before doing any
    work. A Probit fit that fails to converge does not stop the run; the
    manifest records it under ``"converged"``.
    """
    problems = missing_inputs(cfg)
    if problems:
        raise InputError("missing inputs:\n  " + "\n  ".join(problems))
    run = Path(out if out is not None else cfg.out)
    run.mkdir(parents=True, exist_ok=True)
    write_json(cfg.resolved(), run / "config.resolved.json")
    timer = _Timer()
    inp = cfg.inputs.model_copy(deep=True)
    seeds = {"communities": cfg.communities.seed, "significance": cfg.significance.seed}
    outputs = {}

    if cfg.synth.enabled:
        with timer.stage("synth"):
            spec = WorldSpec.from_json(cfg.synth.spec) if cfg.synth.spec else WorldSpec()
            if cfg.synth.overrides:
                spec = WorldSpec(**{**spec.__dict__, **cfg.synth.overrides})
            seeds["synth"] = spec.seed
            world = generate_world(spec)
            paths = world.write(run / "synth")
            spec.to_json(run / "synth" / "worldspec.json")
            inp.transactions, inp.firms, inp.ownership = paths["transactions"], paths["firms"], paths["ownership"]
            inp.concordance, inp.sections, inp.truth_edges = paths["concordance"], paths["sections"], paths["truth"]
            if cfg.synth.trade and inp.trade_base is None:
                down: dict[str, list] = {}
                for s, t in zip(world.truth["source_hs4"], world.truth["target_hs4"]):
                    down.setdefault(s, []).append(t)
                seeds["synth_trade"] = cfg.synth.trade_seed
                tw = generate_trade(world.products, down, n_countries=cfg.synth.trade_countries,
                                    seed=cfg.synth.trade_seed)
                tp = tw.write(run / "synth")
                inp.trade_base, inp.trade_end, inp.population = tp["trade_base"], tp["trade_end"], tp["population"]
                inp.base_year, inp.end_year = 2016, 2021

    digests = {
        k: sha256(v)
        for k, v in inp.model_dump().items()
        if isinstance(v, str) and Path(v).is_file()
    }
    digests.update({f"sector_list:{k}": sha256(v) for k, v in inp.sector_lists.items()})

    with timer.stage("ingest"):
        sections = load_sections(inp.sections) if inp.sections else None
        conc = HSConcordance.from_csv(inp.concordance, hs2022_codes=set(sections) if sections else None) \
            if inp.concordance else None
        res = ingest(inp.transactions, inp.firms, inp.ownership, conc, sections,
                     tuple(cfg.ingest.window), cfg.ingest.max_sections)
        res.write(run / "ingest")
        outputs["ingest"] = res.report.__dict__ | {"reconciles": res.report.reconciles()}

    with timer.stage("infer"):
        tx = read_clean_transactions(run / "ingest" / "transactions.csv")
        index = ProducerBuyerIndex(tx)
        edges = build_edge_list(index, cfg.infer.weight_threshold, cfg.infer.firmcount, cfg.infer.value_min)
        write_edges(edges, run / "edges.csv")
        net = ProductNetwork.from_edges(edges, metadata=cfg.infer.model_dump())
        net.to_json(run / "network.json")
        main = largest_wcc(net)
        outputs["network"] = {"nodes": net.n, "edges": net.n_edges, "component_nodes": main.n,
                              "component_edges": main.n_edges}

    with timer.stage("analyze"):
        classes = goods_classification_join(main, inp.goods_classes) if inp.goods_classes else None
        nodes = centrality_report(main, cfg.analyze.weighted_paths, classes)
        write_nodes(nodes, run / "nodes.csv")

    if cfg.communities.enabled and main.n_edges:
        with timer.stage("communities"):
            c = cfg.communities
            scan = stability_scan(main, time_grid(c.tmin, c.tmax, c.steps), c.iterations, c.seed, c.teleport)
            write_json(scan.to_dict(main.nodes), run / "partitions.json")
            outputs["communities"] = {"n_communities": [int(k) for k in scan.n_communities()]}

    if inp.sector_lists:
        with timer.stage("subgraph"):
            (run / "subgraph").mkdir(exist_ok=True)
            for name in sorted(inp.sector_lists):
                listed = read_node_list(inp.sector_lists[name])
                present = [p for p in listed if p in main.pos]
                test = null_ensemble_pvalue(main, present, cfg.significance.samples, cfg.significance.seed,
                                            weighted=cfg.significance.weighted)
                doc = test.to_dict() | {"not_in_network": [p for p in listed if p not in main.pos]}
                write_json(doc, run / "subgraph" / f"{name}.json")

    if inp.trade_base:
        with timer.stage("trade"):
            base = TradeMatrix(load_trade(inp.trade_base, inp.base_year),
                               load_population(inp.population, inp.base_year), inp.base_year)
            end = TradeMatrix(load_trade(inp.trade_end, inp.end_year),
                              load_population(inp.population, inp.end_year), inp.end_year)
            (run / "trade").mkdir(exist_ok=True)
            write_matrix(base.rca(), run / "trade" / "rca.csv", "rca")
            rp = base.rpop()
            write_matrix(rp, run / "trade" / "rpop.csv", "rpop")
            write_matrix(presence_matrix(rp, cfg.predict.density_presence_thr), run / "trade" / "presence.csv",
                         "present")
        with timer.stage("predict"):
            outputs["predict"] = predict_stage(main, base, end, cfg.predict, run / "predict")

    if inp.truth_edges:
        with timer.stage("score"):
            truth = pd.read_csv(inp.truth_edges, dtype={"source_hs4": str, "target_hs4": str})
            rec = score_recovery(edges, truth)
            write_json(rec, run / "recovery.json")
            outputs["recovery"] = rec

    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "libraries": _library_versions(),
        "input_sha256": digests,
        "seeds": seeds,
        "wall_seconds": timer.times,
        "outputs": outputs,
        "files": sorted(str(p.relative_to(run)) for p in run.rglob("*") if p.is_file() and p.name != "manifest.json"),
    }
    write_json(manifest, run / "manifest.json")
    return manifest


def predict_stage(net, base: TradeMatrix, end: TradeMatrix, cfg: PredictConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel = entry_panel(base.rpop(), end.rpop(), net, base.world_trade(), cfg.absence_thr, cfg.presence_thr,
                        cfg.trade_min_usd, cfg.density_presence_thr, cfg.k)
    panel.frame.to_csv(out / "panel.csv", index=False, lineterminator="\n")
    regs = regressors_for(cfg.direction)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        fit = probit_fit(panel, regs, cfg.fixed_effects)
        held_out = grouped_cv_auc(panel, regs, cfg.fixed_effects, cfg.folds)
    results = fit.to_dict() | {
        "direction": cfg.direction,
        "fixed_effects": cfg.fixed_effects,
        "auc_held_out": held_out,
        "sample": panel.stats,
        "warnings": sorted({str(w.message) for w in caught}),
    }
    write_json(results, out / "results.json")
    return {"converged": fit.converged, "auc_in_sample": fit.auc, "auc_held_out": held_out}


def _library_versions() -> dict:
    import numba
    import pydantic
    import scipy

    return {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__,
            "numba": numba.__version__, "pydantic": pydantic.__version__}
