"""``recipe-net`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical non-convergence (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import pandas as pd

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3


class NonConvergence(RuntimeError):
    pass


def _window(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("window must look like 2021-01:2023-12")
    return parts[0], parts[1]


_INPUT_ARGS = ("transactions", "firms", "ownership", "concordance", "sections", "network", "nodes", "classes",
               "trade", "population", "trade_base", "trade_end", "spec", "inferred", "truth", "reference",
               "a", "b", "config")


def missing_paths(args) -> list[str]:
    """All input files named on the command line that do not exist."""
    out = []
    for name in _INPUT_ARGS:
        v = getattr(args, name, None)
        if isinstance(v, str) and not Path(v).is_file():
            out.append(f"--{name.replace('_', '-')}: no such file {v}")
    for v in getattr(args, "complexity", None) or []:
        if not Path(v).is_file():
            out.append(f"--complexity: no such file {v}")
    in_dir = getattr(args, "in_dir", None)
    if in_dir is not None and not (Path(in_dir) / "transactions.csv").is_file():
        out.append(f"--in: no transactions.csv in {in_dir}")
    return out


def _dump(obj, path) -> None:
    from .pipeline import write_json

    if path is None or str(path) == "-":
        json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
        sys.stdout.write("\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_json(obj, path)


def cmd_ingest(a) -> int:
    from .hs import load_sections
    from .ingest import HSConcordance, ingest

    sections = load_sections(a.sections) if a.sections else None
    conc = HSConcordance.from_csv(a.concordance, hs2022_codes=set(sections) if sections else None) \
        if a.concordance else None
    res = ingest(a.transactions, a.firms, a.ownership, conc, sections, a.window,
                 None if a.no_section_filter else a.max_sections)
    res.write(a.out)
    print(json.dumps(res.report.__dict__, sort_keys=True))
    return EXIT_OK


def cmd_infer(a) -> int:
    from .ingest import read_clean_transactions
    from .network import ProductNetwork
    from .recipe import ProducerBuyerIndex, build_edge_list, write_edges

    tx = read_clean_transactions(Path(a.in_dir) / "transactions.csv")
    edges = build_edge_list(ProducerBuyerIndex(tx), a.weight_threshold, a.firmcount, a.value_min)
    write_edges(edges, a.out)
    meta = {"weight_threshold": a.weight_threshold, "firmcount": a.firmcount, "value_min": a.value_min}
    net = ProductNetwork.from_edges(edges, metadata=meta)
    net.to_json(a.network or Path(a.out).with_name("network.json"))
    print(f"{len(edges)} edges over {net.n} products")
    return EXIT_OK


def cmd_analyze(a) -> int:
    from .compare import load_network
    from .network import centrality_report, goods_classification_join, largest_wcc, write_nodes

    net = load_network(a.network)
    if not a.all_nodes:
        net = largest_wcc(net)
    classes = goods_classification_join(net, a.classes) if a.classes else None
    write_nodes(centrality_report(net, a.weighted, classes), a.out)
    return EXIT_OK


def cmd_communities(a) -> int:
    from .communities import stability_scan, time_grid
    from .compare import load_network
    from .network import largest_wcc

    net = largest_wcc(load_network(a.network))
    scan = stability_scan(net, time_grid(a.tmin, a.tmax, a.steps), a.iterations, a.seed, a.teleport)
    _dump(scan.to_dict(net.nodes), a.out)
    return EXIT_OK


def cmd_subgraph_test(a) -> int:
    from .compare import load_network
    from .significance import null_ensemble_pvalue, read_node_list

    net = load_network(a.network)
    res = null_ensemble_pvalue(net, read_node_list(a.nodes), a.samples, a.seed, weighted=a.weighted)
    _dump(res.to_dict(), a.out)
    return EXIT_OK


def cmd_trade(a) -> int:
    from .trade import load_trade_matrix, presence_matrix, write_matrix

    tm = load_trade_matrix(a.trade, a.population, a.year)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(tm.rca(), out / "rca.csv", "rca")
    rp = tm.rpop()
    write_matrix(rp, out / "rpop.csv", "rpop")
    write_matrix(presence_matrix(rp, a.presence_threshold), out / "presence.csv", "present")
    if a.nodes:
        from .network import read_nodes
        from .trade import hub_complexity_correlations, load_complexity, top_bc_export_share

        nodes = read_nodes(a.nodes)
        rca = tm.rca()
        share = top_bc_export_share(nodes, rca, min(a.top_k, len(nodes))).rename("top_bc_share")
        share.to_frame().to_csv(out / "top_bc_share.csv", lineterminator="\n")
        if a.complexity:
            comp = [load_complexity(p) for p in a.complexity]
            pci = next((c for c in comp if c.index.str.fullmatch(r"\d{4}").all()), None)
            eci = next((c for c in comp if c is not pci), None)
            hub = nodes.set_index("hs4")["hub"]
            _dump(hub_complexity_correlations(hub, rca, pci, eci), out / "complexity.json")
    return EXIT_OK


def cmd_compare(a) -> int:
    from .compare import compare_networks, load_network

    _dump(compare_networks(load_network(a.a), load_network(a.b), a.mode), a.out)
    return EXIT_OK


def cmd_sweep(a) -> int:
    from .compare import load_network, parse_range, sweep
    from .ingest import read_clean_transactions
    from .recipe import ProducerBuyerIndex

    tx = read_clean_transactions(Path(a.in_dir) / "transactions.csv")
    grid = sweep(ProducerBuyerIndex(tx), load_network(a.reference), parse_range(a.firmcount, int),
                 parse_range(a.threshold, float), a.value_min, a.mode)
    grid.to_csv(a.out, index=False, lineterminator="\n")
    return EXIT_OK


def cmd_predict(a) -> int:
    from .compare import load_network
    from .network import largest_wcc
    from .pipeline import PredictConfig, predict_stage
    from .trade import TradeMatrix, load_population, load_trade

    net = largest_wcc(load_network(a.network))
    base = TradeMatrix(load_trade(a.trade_base, a.base_year), load_population(a.population, a.base_year))
    end = TradeMatrix(load_trade(a.trade_end, a.end_year), load_population(a.population, a.end_year))
    cfg = PredictConfig(direction=a.direction, fixed_effects=a.fixed_effects, presence_thr=a.presence_threshold,
                        absence_thr=a.absence_threshold, trade_min_usd=a.trade_min, k=a.k)
    out_dir = Path(a.out).parent if a.out.endswith(".json") else Path(a.out)
    summary = predict_stage(net, base, end, cfg, out_dir)
    if a.out.endswith(".json") and Path(a.out) != out_dir / "results.json":
        (out_dir / "results.json").replace(a.out)
    print(json.dumps(summary, sort_keys=True))
    if not summary["converged"]:
        raise NonConvergence("Probit fit did not converge")
    return EXIT_OK


def cmd_synth(a) -> int:
    from .synthgen import WorldSpec, generate_trade, generate_world, world_summary

    spec = WorldSpec.from_json(a.spec) if a.spec else WorldSpec()
    if a.seed is not None:
        spec.seed = a.seed
    world = generate_world(spec)
    world.write(a.out)
    spec.to_json(Path(a.out) / "worldspec.json")
    if a.trade:
        down: dict[str, list] = {}
        for s, t in zip(world.truth["source_hs4"], world.truth["target_hs4"]):
            down.setdefault(s, []).append(t)
        generate_trade(world.products, down, seed=spec.seed).write(a.out)
    print(json.dumps(world_summary(world), sort_keys=True))
    return EXIT_OK


def cmd_score(a) -> int:
    from .recipe import read_edges
    from .synthgen import score_recovery

    truth = pd.read_csv(a.truth, dtype={"source_hs4": str, "target_hs4": str})
    _dump(score_recovery(read_edges(a.inferred), truth), a.out)
    return EXIT_OK


def cmd_pipeline(a) -> int:
    from .pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.load(a.config) if a.config else PipelineConfig()
    if a.synth:
        cfg.synth.enabled = True
    if a.threads is not None:
        cfg.threads = a.threads
    manifest = run_pipeline(cfg, a.out)
    print(json.dumps(manifest["wall_seconds"], sort_keys=True))
    pred = manifest["outputs"].get("predict")
    if pred is not None and not pred["converged"]:
        raise NonConvergence("Probit fit did not converge")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recipe-net", description="Product networks from firm-to-firm trade.")
    p.add_argument("--version", action="version", version=_version_string())
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="accepted for compatibility; work runs on one thread")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="clean raw transactions into owner-country entities")
    s.add_argument("--transactions", required=True)
    s.add_argument("--firms", required=True)
    s.add_argument("--ownership")
    s.add_argument("--concordance")
    s.add_argument("--sections")
    s.add_argument("--window", type=_window, default=("2021-01", "2023-12"))
    s.add_argument("--max-sections", type=int, default=5)
    s.add_argument("--no-section-filter", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("infer", help="infer input-output edges")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--weight-threshold", type=float, default=2.0)
    s.add_argument("--firmcount", type=int, default=2)
    s.add_argument("--value-min", type=float, default=1000.0)
    s.add_argument("--out", required=True)
    s.add_argument("--network", help="network.json path (default: next to --out)")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("analyze", help="degrees, betweenness and HITS per product")
    s.add_argument("--network", required=True)
    s.add_argument("--weighted", action="store_true", help="path lengths 1/weight for betweenness")
    s.add_argument("--classes", help="hs4,class table")
    s.add_argument("--all-nodes", action="store_true", help="skip the largest-component restriction")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("communities", help="Markov stability scan")
    s.add_argument("--network", required=True)
    s.add_argument("--tmin", type=float, default=0.1)
    s.add_argument("--tmax", type=float, default=100.0)
    s.add_argument("--steps", type=int, default=40)
    s.add_argument("--iterations", type=int, default=100)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--teleport", type=float, default=0.15)
    s.add_argument("--out", default="partitions.json")
    s.set_defaults(func=cmd_communities)

    s = sub.add_parser("subgraph-test", help="null-ensemble test of a product set")
    s.add_argument("--network", required=True)
    s.add_argument("--nodes", required=True)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--weighted", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_subgraph_test)

    s = sub.add_parser("trade", help="RCA, Rpop and presence matrices")
    s.add_argument("--trade", required=True)
    s.add_argument("--population", required=True)
    s.add_argument("--year", type=int)
    s.add_argument("--presence-threshold", type=float, default=1.0)
    s.add_argument("--nodes", help="nodes.csv for top-betweenness export shares")
    s.add_argument("--top-k", type=int, default=50)
    s.add_argument("--complexity", nargs="*", help="PCI and/or ECI tables")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trade)

    s = sub.add_parser("compare", help="compare two networks on shared products")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--mode", choices=("binary", "weighted"), default="binary")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="correlations with a reference network over a threshold grid")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--firmcount", default="2:10")
    s.add_argument("--threshold", default="1:5")
    s.add_argument("--value-min", type=float, default=1000.0)
    s.add_argument("--mode", choices=("binary", "weighted"), default="binary")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("predict", help="Probit of product entry on network density")
    s.add_argument("--network", required=True)
    s.add_argument("--trade-base", required=True)
    s.add_argument("--trade-end", required=True)
    s.add_argument("--population", required=True)
    s.add_argument("--base-year", type=int)
    s.add_argument("--end-year", type=int)
    s.add_argument("--direction", choices=("downstream", "upstream", "both"), default="downstream")
    s.add_argument("--fixed-effects", action="store_true")
    s.add_argument("--presence-threshold", type=float, default=0.1)
    s.add_argument("--absence-threshold", type=float, default=0.05)
    s.add_argument("--trade-min", type=float, default=2e9)
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="generate a synthetic world")
    s.add_argument("--spec")
    s.add_argument("--seed", type=int)
    s.add_argument("--no-trade", dest="trade", action="store_false")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("score", help="score inferred edges against planted truth")
    s.add_argument("--inferred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("pipeline", help="run every stage from one config document")
    s.add_argument("--config")
    s.add_argument("--synth", action="store_true", help="generate the default synthetic world as input")
    s.add_argument("--out")
    s.set_defaults(func=cmd_pipeline)
    return p


def _version_string() -> str:
    import platform

    return f"recipe-net {__version__} (python {platform.python_version()})"


def main(argv=None) -> int:
    from pydantic import ValidationError

    from .ingest import ConfigurationError, DataError
    from .pipeline import InputError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    missing = missing_paths(args)
    if missing:
        print("error: missing inputs:\n  " + "\n  ".join(missing), file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ConfigurationError, ValidationError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, KeyError, pd.errors.ParserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
