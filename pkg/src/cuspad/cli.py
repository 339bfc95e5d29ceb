"""Command line entry point: `cuspad <subcommand> ...`."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .classifier import DecisionTree, accuracy, confusion, predict, train_cart
from .dynamics_sim import generate_scenarios, load_scenarios, read_trace_csv, save_scenarios
from .features import MODES, batch_features, canonical_pairs, read_features_csv, write_features_csv
from .grid_model import bundled_network, load_network
from .measurement import ChannelErrorModel, inject_errors, save_measured
from .placement import PlacementProblem, save_solution, solve_placement, summary, verify_observability

log = logging.getLogger("cuspad")


def _network(name: str):
    return load_network(name) if name.endswith(".json") else bundled_network(name)


def _config(args) -> ex.ExperimentConfig:
    if args.config:
        cfg = ex.ExperimentConfig.from_json(args.config)
    else:
        cfg = ex.PRESETS.get(getattr(args, "network", None) or "net118", ex.PRESETS["net118"])
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _config(args)
    wind = args.wind if args.wind is not None else cfg.wind_fractions[0]
    buses = None if args.all_buses else ex.resolve_pmu_buses(cfg)
    recs = generate_scenarios(
        bundled_network(cfg.network),
        {"islanding": args.islanding or cfg.islanding, "non_islanding": args.non_islanding or cfg.non_islanding},
        wind_fraction=wind,
        seed=ex.scenario_seed(cfg.seed, wind),
        pmu_buses=buses,
        jobs=args.jobs,
    )
    manifest = {"network": cfg.network, "wind_fraction": wind, "seed": cfg.seed, "records": len(recs),
                "pmu_buses": list(recs[0].buses)}
    save_scenarios(recs, _out(args), manifest)
    print(f"wrote {len(recs)} records to {args.out}")
    return 0


def cmd_inject(args) -> int:
    _, recs = load_scenarios(args.scenarios)
    model = ChannelErrorModel(args.pmu_sigma, args.instr_range)
    seed = args.seed if args.seed is not None else 0
    out = _out(args)
    for k, rec in enumerate(recs):
        ms = inject_errors(rec, model, np.random.SeedSequence([seed, k]), args.wrapped)
        save_measured(ms, out, model)
    print(f"wrote {len(recs)} measured records ({model.tag}) to {out}")
    return 0


def _stack(args) -> tuple[np.ndarray, np.ndarray, list[int], bool]:
    _, recs = load_scenarios(args.scenarios)
    labels = np.array([r.label for r in recs])
    if not args.measured:
        return np.stack([r.angles() for r in recs]), labels, recs[0].buses, True
    rows = []
    for rec in recs:
        traces = read_trace_csv(Path(args.measured) / f"{rec.id}_measured_{args.tag}.csv", unwrapped=not args.wrapped)
        rows.append(np.stack([traces[b].samples for b in sorted(traces)]))
    return np.stack(rows), labels, sorted(rec.buses), not args.wrapped


def cmd_features(args) -> int:
    cfg = _config(args)
    A, labels, buses, unwrapped = _stack(args)
    names = [f"{a}-{b}" for a, b in canonical_pairs(buses)]
    out = _out(args)
    for mode in args.modes:
        X, failed, _ = batch_features(A, cfg.feature_config(mode, args.w), unwrapped=unwrapped)
        write_features_csv(out / f"features_{mode}.csv", names, X, labels, failed)
        print(f"{mode}: {len(labels)} rows, {int(failed.sum())} detection failures")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    names, X, y, _ = read_features_csv(args.features)
    tree = train_cart(X, y, args.max_depth or cfg.max_depth, cfg.min_leaf, cfg.seed, names)
    path = _out(args) / "tree.json"
    path.write_text(tree.to_json() + "\n")
    print(f"depth {tree.depth}, {tree.n_nodes} nodes, training accuracy {accuracy(tree, X, y):.2f}% -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    if args.tree:
        tree = DecisionTree.from_dict(json.loads(Path(args.tree).read_text()))
        _, X, y, _ = read_features_csv(args.features)
        pred = predict(tree, X)
        print(json.dumps({"accuracy": float(np.mean(pred == y) * 100), "confusion": confusion(y, pred)}))
        return 0
    cfg = _config(args)
    grid = ex.run_accuracy_grid(cfg, args.cache, args.jobs)
    out = _out(args)
    (out / f"grid_{cfg.network}.json").write_text(ex._dumps(grid.to_dict()))
    for w in cfg.wind_fractions:
        print(grid.table(w, f"{cfg.network}, wind {w:.0%}"))
    checks = []
    if cfg.network == "net18" and cfg.wind_fractions:
        checks.append(ex.trend_check("18-bus accuracy trend", grid, cfg.wind_fractions[0], 2.0, 4.0))
    if cfg.network == "net118" and 0.3 in cfg.wind_fractions:
        checks.append(ex.trend_check("118-bus accuracy trend", grid, 0.3, 2.0, 15.0))
    if len(cfg.instr_ranges) < 2:
        checks = []
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def cmd_place(args) -> int:
    net = _network(args.network)
    p = PlacementProblem.from_network(net, dulr_cost=args.dulr_cost, substation_cost=args.substation_cost)
    sol = solve_placement(p, args.mode)
    ok = verify_observability(sol, p)
    save_solution(sol, p, _out(args) / f"placement_{net.name}_{args.mode}.json")
    print(summary(sol, p))
    return 0 if ok else 1


def cmd_sweep_window(args) -> int:
    cfg = _config(args)
    if args.config is None and args.network is None:
        cfg = dataclasses.replace(ex.PRESETS["net18"], seed=cfg.seed)
    sizes = args.sizes or list(cfg.window_sizes)
    sweep = ex.run_window_sweep(cfg, sizes, args.instr_range, cache_dir=args.cache, jobs=args.jobs)
    (_out(args) / "window_sweep.csv").write_text(ex.window_sweep_csv(sweep))
    for s, rep in sorted(sweep.items()):
        print(f"w={s}: {rep.summary}")
    if {20, 30, 40} <= set(sweep):
        res = ex.window_check(sweep)
        print(res.line())
        return 0 if res.passed else 1
    return 0


def cmd_reproduce(args) -> int:
    seed = args.seed if args.seed is not None else 42
    configs = None
    if args.config:
        cfg = ex.ExperimentConfig.from_json(args.config)
        configs = {cfg.network: cfg}
    passed, results = ex.reproduce_all(args.out, seed, args.jobs, args.cache, configs)
    for r in results:
        print(r.line())
    return 0 if passed else 1


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--cache", help="dataset cache directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="cuspad", description="PMU-based islanding detection experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate labeled scenarios")
    p.add_argument("--network", choices=sorted(ex.PRESETS))
    p.add_argument("--wind", type=float)
    p.add_argument("--islanding", type=int)
    p.add_argument("--non-islanding", type=int)
    p.add_argument("--all-buses", action="store_true", help="record every bus instead of the PMU buses")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("inject", parents=[common], help="add PMU and instrumentation errors")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--instr-range", type=float, default=0.0)
    p.add_argument("--pmu-sigma", type=float, default=0.104)
    p.add_argument("--wrapped", action="store_true", help="report angles folded into one turn")
    p.set_defaults(fn=cmd_inject)

    p = sub.add_parser("features", parents=[common], help="extract AD / CUSPAD features to CSV")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--measured", help="directory written by inject (default: clean angles)")
    p.add_argument("--tag", default="instr0_sigma0p104")
    p.add_argument("--wrapped", action="store_true")
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--w", type=int)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("train", parents=[common], help="fit a CART tree on a features CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--max-depth", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="accuracy grid, or score one tree")
    p.add_argument("--network", choices=sorted(ex.PRESETS))
    p.add_argument("--tree")
    p.add_argument("--features")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("place", parents=[common], help="PMU / relay placement")
    p.add_argument("--network", default="net18", help="bundled name or network JSON path")
    p.add_argument("--mode", choices=("exact", "greedy"), default="exact")
    p.add_argument("--substation-cost", type=float, default=1.0)
    p.add_argument("--dulr-cost", type=float, default=0.1)
    p.set_defaults(fn=cmd_place)

    p = sub.add_parser("sweep-window", parents=[common], help="CUSPAD accuracy per window size")
    p.add_argument("--network", choices=sorted(ex.PRESETS))
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--instr-range", type=float)
    p.set_defaults(fn=cmd_sweep_window)

    p = sub.add_parser("reproduce", parents=[common], help="run every study and write the report")
    p.set_defaults(fn=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "evaluate" and bool(args.tree) != bool(args.features):
        print("evaluate: --tree and --features go together", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
