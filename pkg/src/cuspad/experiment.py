"""Experiment orchestration: datasets, accuracy grids, window sweep, and the
full reproduction report.

Protocol per (network, wind fraction): simulate a labeled dataset of true
angles, train one tree per feature mode on clean features, then for every
instrumentation error level run `trials` fresh corruptions of the same base
and score the fixed tree on each.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import shutil
import time
from importlib import resources
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checks
from .checks import CheckResult
from .classifier import DecisionTree, EvalReport, accuracy, compact, format_table, predict, summarize, train_cart
from . import dynamics_sim as dsim
from .dynamics_sim import ScenarioSettings, generate_scenarios
from .features import (
    AD,
    CUSPAD,
    DEFAULT_JUMP_THRESHOLD,
    MODES,
    FeatureConfig,
    batch_reference,
    batch_window_features,
    canonical_pairs,
)
from .grid_model import bundled_network
from .measurement import INSTRUMENTATION_LEVELS, PMU_SIGMA_DEG, ChannelErrorModel, inject_batch, unwrap_deg
from .placement import PlacementProblem, solve_placement, summary, verify_observability

log = logging.getLogger(__name__)

DATA_VERSION = 1  # bump when simulation output changes for the same inputs

# SeedSequence stream tags
_SCENARIOS, _TRIAL, _TRAIN_NOISE = 1, 2, 4


def _milli(x: float) -> int:
    return int(round(x * 1000))


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class ExperimentConfig:
    network: str = "net118"
    wind_fractions: tuple[float, ...] = (0.3,)
    instr_ranges: tuple[float, ...] = INSTRUMENTATION_LEVELS
    pmu_sigma: float = PMU_SIGMA_DEG
    modes: tuple[str, ...] = MODES
    w: int = 30
    trials: int = 50
    max_depth: int = 4
    min_leaf: int = 1
    islanding: int = 1000
    non_islanding: int = 1000
    seed: int = 42
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD
    ad_aggregate: str = "max"
    cuspad_absolute: bool = False
    predictor: str = "angle"
    pmu_buses: tuple[int, ...] | None = None  # None: take them from the placement solution
    placement_mode: str = "exact"
    substation_cost: float = 1.0
    dulr_cost: float = 0.1
    corrupt_train: bool = False  # ablation: train on one PMU-noise draw instead of clean angles
    report_wrapped: bool = False
    window_sizes: tuple[int, ...] = (5, 10, 20, 30, 40)
    window_instr_range: float = 0.0

    def __post_init__(self):
        for name in ("wind_fractions", "instr_ranges", "modes", "window_sizes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.pmu_buses is not None:
            object.__setattr__(self, "pmu_buses", tuple(sorted(int(b) for b in self.pmu_buses)))
        if not all(0.0 <= f < 1.0 for f in self.wind_fractions) or not self.wind_fractions:
            raise ValueError("wind fractions must lie in [0, 1)")
        if not all(r >= 0 for r in self.instr_ranges) or not self.instr_ranges:
            raise ValueError("instrumentation ranges must be non-negative")
        if any(m not in MODES for m in self.modes):
            raise ValueError(f"modes must be drawn from {MODES}")
        if not all(5 <= s <= 60 for s in self.window_sizes):
            raise ValueError("window sizes must lie in [5, 60]")
        if self.trials < 1 or self.max_depth < 1 or self.w < 1:
            raise ValueError("trials, max_depth and w must be positive")
        if self.islanding < 1 or self.non_islanding < 1:
            raise ValueError("need records of both labels")
        if self.pmu_sigma < 0:
            raise ValueError("pmu_sigma must be non-negative")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known - {"config_hash"}
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**{k: v for k, v in doc.items() if k in known})

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def feature_config(self, mode: str, w: int | None = None) -> FeatureConfig:
        return FeatureConfig(
            mode=mode,
            w=self.w if w is None else w,
            jump_threshold=self.jump_threshold,
            ad_aggregate=self.ad_aggregate,
            cuspad_absolute=self.cuspad_absolute,
            predictor=self.predictor,
        )


PRESETS = {
    # 467 cases with 200 islands, depth 5, one unit replaced by wind (16%)
    "net18": ExperimentConfig(
        network="net18", wind_fractions=(0.16,), max_depth=5, islanding=200, non_islanding=267
    ),
    # 2000 cases, depth 4, three wind levels
    "net118": ExperimentConfig(
        network="net118", wind_fractions=(0.1, 0.2, 0.3), max_depth=4, islanding=1000, non_islanding=1000
    ),
}


# -- datasets --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    network: str
    wind_fraction: float
    buses: tuple[int, ...]
    angles: np.ndarray  # (records, channels, samples) true angles, 30/s, continuous
    labels: np.ndarray
    kinds: tuple[str, ...]
    t_c: np.ndarray
    key: str

    @property
    def pair_names(self) -> list[str]:
        return [f"{a}-{b}" for a, b in canonical_pairs(self.buses)]


def resolve_pmu_buses(cfg: ExperimentConfig) -> tuple[int, ...]:
    if cfg.pmu_buses is not None:
        return cfg.pmu_buses
    p = PlacementProblem.from_network(
        bundled_network(cfg.network), dulr_cost=cfg.dulr_cost, substation_cost=cfg.substation_cost
    )
    return tuple(solve_placement(p, cfg.placement_mode).pmu_buses)


def dataset_key(cfg: ExperimentConfig, wind: float, buses: Sequence[int]) -> str:
    doc = {
        "version": DATA_VERSION,
        "network": cfg.network,
        "network_sha": hashlib.sha256(
            resources.files("cuspad.data").joinpath(f"{cfg.network}.json").read_bytes()
        ).hexdigest(),
        "wind": wind,
        "counts": [cfg.islanding, cfg.non_islanding],
        "seed": cfg.seed,
        "buses": list(buses),
        "settings": dataclasses.asdict(ScenarioSettings()),
        "damping": dsim.DAMPING,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def scenario_seed(seed: int, wind: float) -> int:
    ss = np.random.SeedSequence([seed, _SCENARIOS, _milli(wind)])
    return int(ss.generate_state(1, np.uint32)[0])


def build_dataset(
    cfg: ExperimentConfig,
    wind: float,
    buses: Sequence[int] | None = None,
    cache_dir: str | Path | None = None,
    jobs: int = 1,
) -> Dataset:
    """Simulate (or load from cache) the labeled true-angle dataset."""
    buses = tuple(sorted(buses if buses is not None else resolve_pmu_buses(cfg)))
    key = dataset_key(cfg, wind, buses)
    path = Path(cache_dir) / f"dataset_{cfg.network}_{key}.npz" if cache_dir else None
    if path is not None and path.exists():
        z = np.load(path, allow_pickle=False)
        log.info("loaded cached dataset %s", path)
        return Dataset(
            cfg.network, wind, buses, z["angles"], z["labels"], tuple(z["kinds"].tolist()), z["t_c"], key
        )
    recs = generate_scenarios(
        bundled_network(cfg.network),
        {"islanding": cfg.islanding, "non_islanding": cfg.non_islanding},
        wind_fraction=wind,
        seed=scenario_seed(cfg.seed, wind),
        pmu_buses=buses,
        jobs=jobs,
    )
    ds = Dataset(
        cfg.network,
        wind,
        buses,
        np.stack([r.angles() for r in recs]),
        np.array([r.label for r in recs], dtype=int),
        tuple(r.metadata["script"]["kind"] for r in recs),
        np.array([r.t_c for r in recs]),
        key,
    )
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez_compressed(tmp, angles=ds.angles, labels=ds.labels, kinds=np.array(ds.kinds), t_c=ds.t_c)
        tmp.replace(path)
    return ds


# -- evaluation engine -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Variant:
    key: str
    feature: FeatureConfig
    tree: DecisionTree
    small: DecisionTree
    cols: np.ndarray
    train_accuracy: float


def _features(U: np.ndarray, fc: FeatureConfig, refs: dict, cols=None) -> tuple[np.ndarray, np.ndarray]:
    rk = (fc.jump_threshold, fc.predictor)
    if rk not in refs:
        refs[rk] = batch_reference(U, fc.jump_threshold, 0, fc.predictor)
    t_ref, found = refs[rk]
    ok = found & (t_ref + fc.w < U.shape[-1])
    return batch_window_features(U, t_ref, ok, fc, cols), ok


def _train_variants(ds: Dataset, cfg: ExperimentConfig, feats: dict[str, FeatureConfig]) -> list[_Variant]:
    A = ds.angles
    if cfg.corrupt_train:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _TRAIN_NOISE, _milli(ds.wind_fraction)]))
        A, _ = inject_batch(A, ChannelErrorModel(cfg.pmu_sigma, 0.0), rng)
    refs: dict = {}
    out = []
    for key, fc in feats.items():
        X, _ = _features(A, fc, refs)
        tree = train_cart(X, ds.labels, cfg.max_depth, cfg.min_leaf, cfg.seed, ds.pair_names)
        small, cols = compact(tree)
        out.append(_Variant(key, fc, tree, small, cols, accuracy(tree, X, ds.labels)))
    return out


_STATE: dict = {}


def _init_worker(A, variants, cfg_dict, wind):
    _STATE.update(A=A, variants=variants, cfg=ExperimentConfig.from_dict(cfg_dict), wind=wind)


def _trial(task: tuple[float, int]) -> tuple[float, int, dict]:
    level, k = task
    A, variants, cfg, wind = _STATE["A"], _STATE["variants"], _STATE["cfg"], _STATE["wind"]
    # same stream for every variant at a given (wind, level, trial)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _TRIAL, _milli(wind), _milli(level), k]))
    M, _ = inject_batch(A, ChannelErrorModel(cfg.pmu_sigma, level), rng, cfg.report_wrapped)
    U = unwrap_deg(M) if cfg.report_wrapped else M
    refs: dict = {}
    out = {}
    for v in variants:
        X, ok = _features(U, v.feature, refs, v.cols)
        out[v.key] = (predict(v.small, X), int((~ok).sum()))
    return level, k, out


def evaluate_variants(
    ds: Dataset, cfg: ExperimentConfig, variants: list[_Variant], levels: Sequence[float], jobs: int = 1
) -> dict[tuple[str, float], EvalReport]:
    tasks = [(lvl, k) for lvl in levels for k in range(cfg.trials)]
    init = (ds.angles, variants, cfg.to_dict(), ds.wind_fraction)
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=init) as pool:
            results = list(pool.map(_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        _init_worker(*init)
        results = [_trial(t) for t in tasks]
        _STATE.clear()
    reports = {}
    for v in variants:
        for lvl in levels:
            per = sorted((k, out[v.key]) for l2, k, out in results if l2 == lvl)
            reports[(v.key, lvl)] = summarize(
                v.tree, [(ds.labels, pred, fails) for _, (pred, fails) in per], v.train_accuracy
            )
    return reports


# -- grids ----------------------------------------------------------------------------


@dataclass
class ResultsGrid:
    config: ExperimentConfig
    pmu_buses: tuple[int, ...]
    cells: dict[tuple[float, float, str], EvalReport] = field(default_factory=dict)
    trees: dict[tuple[float, str], DecisionTree] = field(default_factory=dict)

    def cell(self, wind: float, instr: float, mode: str) -> EvalReport:
        return self.cells[(wind, instr, mode)]

    def table(self, wind: float, title: str = "") -> str:
        rows = []
        for lvl in self.config.instr_ranges:
            label = "0" if lvl == 0 else f"-{lvl:g}° ≤ α ≤ {lvl:g}°"
            rows.append((label, self.cells[(wind, lvl, AD)], self.cells[(wind, lvl, CUSPAD)]))
        return format_table(rows, title)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash,
            "pmu_buses": list(self.pmu_buses),
            "cells": [
                {"wind_fraction": w, "instr_range": r, "mode": m, **rep.to_dict()}
                for (w, r, m), rep in sorted(self.cells.items())
            ],
        }

    def long_rows(self) -> list[list]:
        return [
            [self.config.network, w, r, m, round(rep.mean_accuracy, 6), round(rep.ci95_halfwidth, 6), rep.depth]
            for (w, r, m), rep in sorted(self.cells.items())
        ]


def run_accuracy_grid(
    cfg: ExperimentConfig, cache_dir: str | Path | None = None, jobs: int = 1
) -> ResultsGrid:
    buses = resolve_pmu_buses(cfg)
    grid = ResultsGrid(cfg, buses)
    for wind in cfg.wind_fractions:
        try:
            ds = build_dataset(cfg, wind, buses, cache_dir, jobs)
            variants = _train_variants(ds, cfg, {m: cfg.feature_config(m) for m in cfg.modes})
            reports = evaluate_variants(ds, cfg, variants, cfg.instr_ranges, jobs)
        except Exception as exc:
            raise RuntimeError(f"grid cell failed: network={cfg.network} wind={wind}: {exc}") from exc
        for v in variants:
            grid.trees[(wind, v.key)] = v.tree
        for (key, lvl), rep in reports.items():
            grid.cells[(wind, lvl, key)] = rep
    return grid


def run_window_sweep(
    cfg: ExperimentConfig,
    sizes: Sequence[int] | None = None,
    instr_range: float | None = None,
    wind: float | None = None,
    cache_dir: str | Path | None = None,
    jobs: int = 1,
) -> dict[int, EvalReport]:
    """CUSPAD accuracy per window length at one error level. Trials use the
    grid's random streams, so the entry at cfg.w equals the grid cell."""
    sizes = tuple(sizes if sizes is not None else cfg.window_sizes)
    if not all(5 <= s <= 60 for s in sizes):
        raise ValueError("window sizes must lie in [5, 60]")
    level = cfg.window_instr_range if instr_range is None else instr_range
    wind = cfg.wind_fractions[0] if wind is None else wind
    ds = build_dataset(cfg, wind, resolve_pmu_buses(cfg), cache_dir, jobs)
    feats = {f"w{s}": cfg.feature_config(CUSPAD, s) for s in sizes}
    variants = _train_variants(ds, cfg, feats)
    reports = evaluate_variants(ds, cfg, variants, [level], jobs)
    return {s: reports[(f"w{s}", level)] for s in sizes}


def window_sweep_csv(sweep: dict[int, EvalReport]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["w", "mean_accuracy", "ci95_halfwidth", "depth"])
    for s, rep in sorted(sweep.items()):
        wr.writerow([s, round(rep.mean_accuracy, 6), round(rep.ci95_halfwidth, 6), rep.depth])
    return buf.getvalue()


def penetration_csv(grids: Sequence[ResultsGrid]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["network", "wind_fraction", "instr_range", "mode", "mean_accuracy", "ci95_halfwidth", "depth"])
    for g in grids:
        wr.writerows(g.long_rows())
    return buf.getvalue()


# -- acceptance ---------------------------------------------------------------------------


def trend_check(
    name: str, grid: ResultsGrid, wind: float, cuspad_tol: float, ad_drop: float
) -> CheckResult:
    """Flat CUSPAD between 0 and the largest error; AD degraded by at least
    `ad_drop` points and non-increasing (within CIs) over the nonzero levels."""
    levels = sorted(grid.config.instr_ranges)
    lo, hi = levels[0], levels[-1]
    c0, c4 = grid.cell(wind, lo, CUSPAD), grid.cell(wind, hi, CUSPAD)
    a0, a4 = grid.cell(wind, lo, AD), grid.cell(wind, hi, AD)
    flat = abs(c4.mean_accuracy - c0.mean_accuracy) <= cuspad_tol
    drop = a0.mean_accuracy - a4.mean_accuracy >= ad_drop
    seq = [grid.cell(wind, lvl, AD) for lvl in levels if lvl > 0]
    mono = all(b.mean_accuracy <= a.mean_accuracy + a.ci95_halfwidth + b.ci95_halfwidth for a, b in zip(seq, seq[1:]))
    path = " -> ".join(f"{r.mean_accuracy:.2f}" for r in seq)
    return CheckResult(
        name,
        flat and drop and mono,
        f"CUSPAD {c0.mean_accuracy:.2f} -> {c4.mean_accuracy:.2f} (|diff| <= {cuspad_tol:g}: {flat}); "
        f"AD {a0.mean_accuracy:.2f} -> {a4.mean_accuracy:.2f} (drop >= {ad_drop:g}: {drop}); "
        f"AD over nonzero errors {path} (non-increasing within CI: {mono})",
    )


def window_check(sweep: dict[int, EvalReport]) -> CheckResult:
    acc = {s: r.mean_accuracy for s, r in sweep.items()}
    g1, g2 = acc[30] - acc[20], acc[40] - acc[30]
    return CheckResult(
        "window-size trend",
        g2 < g1,
        f"gain 20->30 = {g1:.2f}, gain 30->40 = {g2:.2f} (second must be smaller)",
    )


def placement_report(name: str, dulr_cost: float = 0.1, substation_cost: float = 1.0) -> dict:
    p = PlacementProblem.from_network(bundled_network(name), dulr_cost=dulr_cost, substation_cost=substation_cost)
    out = {"network": name, "substation_cost": substation_cost, "dulr_cost": dulr_cost}
    for mode in ("exact", "greedy"):
        sol = solve_placement(p, mode)
        out[mode] = sol.to_dict(p)
        out[mode]["summary"] = summary(sol, p)
        out[mode]["observable"] = verify_observability(sol, p)
    out["gap_greedy_minus_exact"] = round(out["greedy"]["total_cost"] - out["exact"]["total_cost"], 10)
    return out


_REPORT_MARK = "ACCEPTANCE.txt"


def _prepare_out(out: Path) -> None:
    if out.exists():
        if any(out.iterdir()) and not (out / _REPORT_MARK).exists():
            raise FileExistsError(f"{out} is not empty and is not an earlier report directory")
        shutil.rmtree(out)
    out.mkdir(parents=True)


def reproduce_all(
    out: str | Path,
    seed: int = 42,
    jobs: int = 1,
    cache_dir: str | Path | None = None,
    configs: dict[str, ExperimentConfig] | None = None,
    timings: dict[str, float] | None = None,
) -> tuple[bool, list[CheckResult]]:
    """Run every study and write one report directory. The directory content
    is a pure function of the seed and configs (no timestamps or timings);
    wall-clock seconds per stage go into `timings` when given."""
    out = Path(out)
    _prepare_out(out)
    cfgs = {k: dataclasses.replace(v, seed=seed) for k, v in (configs or PRESETS).items()}
    results: list[CheckResult] = []

    for fn in checks.ALL:
        res = fn()
        log.info("%s (%.1f s)", res.line(), res.seconds)
        results.append(res)
        if timings is not None:
            timings[fn.__name__] = res.seconds

    for name in ("net18", "net118"):
        (out / f"placement_{name}.json").write_text(_dumps(placement_report(name)))

    (out / "trees").mkdir()
    grids = []
    for name, cfg in cfgs.items():
        (out / f"config_{name}.json").write_text(_dumps({**cfg.to_dict(), "config_hash": cfg.config_hash}))
        log.info("accuracy grid %s", name)
        t0 = time.perf_counter()
        grid = run_accuracy_grid(cfg, cache_dir, jobs)
        if timings is not None:
            timings[f"grid_{name}"] = time.perf_counter() - t0
        grids.append(grid)
        (out / f"grid_{name}.json").write_text(_dumps(grid.to_dict()))
        for (wind, mode), tree in sorted(grid.trees.items()):
            (out / "trees" / f"{name}_wind{_milli(wind):04d}_{mode}.json").write_text(tree.to_json() + "\n")
        tables = [
            grid.table(w, f"{name}, wind {w:.0%}, PMU buses {list(grid.pmu_buses)}, config {cfg.config_hash}")
            for w in cfg.wind_fractions
        ]
        (out / f"table_{name}.md").write_text("\n".join(tables))
        if name == "net18":
            results.append(trend_check("18-bus accuracy trend", grid, cfg.wind_fractions[0], 2.0, 4.0))
            sweep = run_window_sweep(cfg, cache_dir=cache_dir, jobs=jobs)
            (out / "window_sweep.csv").write_text(window_sweep_csv(sweep))
            results.append(window_check(sweep))
        if name == "net118" and 0.3 in cfg.wind_fractions:
            results.append(trend_check("118-bus accuracy trend", grid, 0.3, 2.0, 15.0))
    (out / "penetration_sweep.csv").write_text(penetration_csv(grids))

    passed = all(r.passed for r in results)
    (out / "acceptance.json").write_text(
        _dumps({"passed": passed, "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]})
    )
    (out / _REPORT_MARK).write_text("\n".join(r.line() for r in results) + "\n")
    return passed, results
