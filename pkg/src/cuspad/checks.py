"""Self-contained numerical checks of the method's exact properties.

Each check returns a CheckResult; the experiment report and the acceptance
tests both call these.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

import numpy as np

from .dynamics_sim import AngleTrace, generate_scenarios
from .features import (
    angle_difference,
    cuspad_sum,
    detect_reference,
    residual,
    residual_series,
    tsqpa_predict,
)
from .grid_model import bundled_network
from .measurement import ChannelErrorModel, draw_errors, inject_errors, wrap_deg
from .placement import PlacementProblem, brute_force_cost, solve_placement, verify_observability


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _timed(fn):
    def wrapper(*a, **kw):
        t = time.perf_counter()
        res = fn(*a, **kw)
        return CheckResult(res.name, res.passed, res.detail, time.perf_counter() - t)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_trace(rng: np.random.Generator, n: int = 120, jump_at: int | None = None) -> np.ndarray:
    """Continuous angle trace: constant start, then a step plus smooth drift."""
    base = rng.uniform(-180, 180)
    x = np.full(n, base)
    k = jump_at if jump_at is not None else int(rng.integers(20, n - 40))
    t = np.arange(n - k, dtype=float)
    step = rng.uniform(2, 20) * rng.choice([-1.0, 1.0])
    x[k:] += step + rng.uniform(-5, 5) * t / 30 + rng.uniform(-3, 3) * (t / 30) ** 2
    return x + rng.normal(0, 0.05, n) * (rng.random() < 0.5)


@_timed
def offset_cancellation(n_traces: int = 1000, seed: int = 1, w: int = 30, threshold: float = 1.0) -> CheckResult:
    """Cumulative sums and residuals unchanged by a constant channel offset."""
    rng = np.random.default_rng(seed)
    worst_s = worst_r = 0.0
    misses = compared = 0
    for _ in range(n_traces):
        x = random_trace(rng)
        c = rng.uniform(-10, 10)
        r0, r1 = residual_series(x), residual_series(x + c)
        worst_r = max(worst_r, float(np.nanmax(np.abs(r1 - r0))))
        tr0 = AngleTrace(0, 30.0, 0.0, x)
        tr1 = AngleTrace(0, 30.0, 0.0, x + c)
        ref0, ref1 = detect_reference(tr0, threshold), detect_reference(tr1, threshold)
        if (ref0 is None) != (ref1 is None) or (ref0 is not None and ref0.t_ref != ref1.t_ref):
            misses += 1
            continue
        if ref0 is None:
            continue
        compared += 1
        s0, s1 = cuspad_sum(tr0, ref0, w), cuspad_sum(tr1, ref1, w)
        worst_s = max(worst_s, abs(s1 - s0) / (1 + abs(s0)))
    ok = worst_s <= 1e-9 and worst_r <= 1e-12 and misses == 0 and compared == n_traces
    return CheckResult(
        "offset cancellation",
        ok,
        f"{compared}/{n_traces} traces, max |dS|/(1+|S|) = {worst_s:.2e} (<= 1e-9), "
        f"max |dr| = {worst_r:.2e} (<= 1e-12), reference mismatches = {misses}",
    )


@_timed
def ad_error_propagation(n_scenarios: int = 100, seed: int = 2) -> CheckResult:
    """With zero device noise, measured minus true pair difference equals the
    offset difference at every sample.

    Angles are compared as a PMU reports them, folded into one turn, so the
    identity holds modulo 360 degrees. The unwrapped-domain deviation is
    reported alongside; it grows with the angle magnitude (float spacing) on
    fast-drifting islands."""
    net = bundled_network("net18")
    recs = generate_scenarios(
        net, {"islanding": n_scenarios // 2, "non_islanding": n_scenarios - n_scenarios // 2}, seed=seed,
        pmu_buses=[1, 11, 14, 23, 31],
    )
    model = ChannelErrorModel(pmu_sigma=0.0, instr_range=4.0)
    worst = worst_unwrapped = 0.0
    for k, rec in enumerate(recs):
        ms = inject_errors(rec, model, seed=seed * 100_000 + k, report_wrapped=True)
        raw = inject_errors(rec, model, seed=seed * 100_000 + k)
        buses = rec.buses
        for i, a in enumerate(buses):
            for b in buses[i + 1 :]:
                e = ms.offsets[a] - ms.offsets[b]
                true = angle_difference(wrap_deg(rec.traces[a].samples), wrap_deg(rec.traces[b].samples))
                meas = angle_difference(ms.traces[a].samples, ms.traces[b].samples)
                worst = max(worst, float(np.abs(wrap_deg(meas - true - e)).max()))
                true_u = angle_difference(rec.traces[a].samples, rec.traces[b].samples, wrapped=False)
                meas_u = angle_difference(raw.traces[a].samples, raw.traces[b].samples, wrapped=False)
                worst_unwrapped = max(worst_unwrapped, float(np.abs(meas_u - true_u - e).max()))
    return CheckResult(
        "AD error propagation",
        worst <= 1e-12,
        f"{len(recs)} scenarios, max deviation {worst:.2e} on reported angles (<= 1e-12); "
        f"{worst_unwrapped:.2e} on unwrapped angles",
    )


@_timed
def tsqpa_exactness(n_sequences: int = 1000, seed: int = 3) -> CheckResult:
    """Zero residual on quadratics; third difference 6*a3 on cubics."""
    rng = np.random.default_rng(seed)
    worst_q = worst_c = 0.0
    n = np.arange(12, dtype=float)
    for _ in range(n_sequences):
        a0, a1, a2, a3 = rng.uniform(-10, 10), rng.uniform(-2, 2), rng.uniform(-0.1, 0.1), rng.uniform(-0.01, 0.01)
        quad = a0 + a1 * n + a2 * n**2
        worst_q = max(worst_q, float(np.nanmax(np.abs(residual_series(quad)))))
        cub = quad + a3 * n**3
        third = -residual(tsqpa_predict(cub[2:-1], cub[1:-2], cub[:-3]), cub[3:])
        worst_c = max(worst_c, float(np.abs(third - 6 * a3).max()))
    ok = worst_q <= 1e-12 and worst_c <= 1e-12
    return CheckResult(
        "quadratic prediction exactness",
        ok,
        f"max quadratic residual {worst_q:.2e}, max |third difference - 6 a3| {worst_c:.2e} (<= 1e-12)",
    )


def random_graph(rnd: random.Random, max_edges: int = 8):
    n = rnd.randint(2, 7)
    edges = {(rnd.randrange(i), i) for i in range(1, n)}  # spanning tree keeps every vertex covered
    target = rnd.randint(len(edges), max(len(edges), min(max_edges, n * (n - 1) // 2)))
    while len(edges) < target:
        a, b = rnd.sample(range(n), 2)
        edges.add((min(a, b), max(a, b)))
    edges = sorted(edges)
    groups = [[i] for i in range(n)]
    if n > 2 and rnd.random() < 0.5:
        groups = [[0, 1]] + [[i] for i in range(2, n)]
    costs = [rnd.choice([0.5, 1.0, 2.0]) for _ in groups]
    return PlacementProblem.from_edges(edges, groups, costs, dulr_cost=rnd.choice([0.1, 0.3, 1.0]))


@_timed
def placement_oracle(n_graphs: int = 50, seed: int = 4) -> CheckResult:
    """Exact solver equals exhaustive search; all solutions observable."""
    rnd = random.Random(seed)
    mismatches = 0
    for _ in range(n_graphs):
        p = random_graph(rnd)
        sol = solve_placement(p, "exact")
        if abs(sol.total_cost - brute_force_cost(p)) > 1e-9 or not verify_observability(sol, p):
            mismatches += 1
    observable = []
    for name in ("net18", "net118"):
        p = PlacementProblem.from_network(bundled_network(name))
        for mode in ("exact", "greedy"):
            observable.append(verify_observability(solve_placement(p, mode), p))
    ok = mismatches == 0 and all(observable)
    return CheckResult(
        "placement optimality",
        ok,
        f"{n_graphs - mismatches}/{n_graphs} random graphs match exhaustive search; "
        f"bundled-network solutions observable: {sum(observable)}/{len(observable)}",
    )


@_timed
def error_model_statistics(seed: int = 5, instr_range: float = 4.0) -> CheckResult:
    """Noise spread, offset constancy, offset uniformity."""
    from scipy.stats import kstest

    rng = np.random.default_rng(seed)
    _, noise = draw_errors(rng, ChannelErrorModel(0.104, 0.0), (1000, 100))
    std = float(noise.std(ddof=1))
    offsets, _ = draw_errors(rng, ChannelErrorModel(0.0, instr_range), (10_000, 30))
    p = float(kstest(offsets.ravel(), "uniform", args=(-instr_range, 2 * instr_range)).pvalue)
    # constancy through the public injection path: one offset value per
    # channel, and (measured - true) flat down to float spacing
    net = bundled_network("net18")
    rec = generate_scenarios(net, {"islanding": 1, "non_islanding": 1}, seed=seed, pmu_buses=[1, 11, 14, 23, 31])[0]
    ms = inject_errors(rec, ChannelErrorModel(0.0, instr_range), seed=seed)
    spread = 0.0
    for b in rec.buses:
        d = ms.traces[b].samples - rec.traces[b].samples
        ulp = float(np.spacing(np.abs(rec.traces[b].samples).max()))
        spread = max(spread, float(np.abs(d - ms.offsets[b]).max()) / ulp)
    ok = 0.104 * 0.95 <= std <= 0.104 * 1.05 and p > 0.01 and spread <= 1.0
    return CheckResult(
        "error model statistics",
        ok,
        f"noise std {std:.4f} deg over 1e5 samples (0.0988..0.1092), offset KS p = {p:.3f} over 1e4 channels, "
        f"max |(measured - true) - offset| = {spread:.2f} ulp",
    )


ALL = (offset_cancellation, ad_error_propagation, tsqpa_exactness, placement_oracle, error_model_statistics)
