"""Reduced-order swing-equation simulation and labeled scenario generation.

Synchronous machines are classical constant-voltage-behind-reactance models
coupled through a DC (linearized, lossless) network. Every network bus is
algebraic: its angle is reconstructed from the machine internal angles by Kron
reduction. Inverter-based units are constant injections with no inertia.
Because the coupling is linear, one RK4 step is an affine map of the state;
that map is computed once per topology by pushing the identity through the
generic RK4 stage formula.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .grid_model import (
    BusId,
    IslandCut,
    NetworkModel,
    apply_cut,
    apply_wind_penetration,
    components,
    enumerate_island_cuts,
)

log = logging.getLogger(__name__)

DEFAULT_DT = 1.0 / 600.0
DEFAULT_HORIZON = 4.0
TRANSIENT_REACTANCE = 0.25  # pu on machine base
DAMPING = 2.0  # pu power per pu speed, machine base


class SimulationError(RuntimeError):
    """Numerical blow-up or a network state without a valid equilibrium."""


@dataclass(frozen=True)
class ContingencyScript:
    kind: str  # none | island | line_trip | generator_trip | bus_fault
    t_c: float
    cut: IslandCut | None = None
    branch: int | None = None
    generator: int | None = None
    bus: BusId | None = None
    clearing_time: float | None = None
    residual_voltage: float = 0.2

    KINDS = ("none", "island", "line_trip", "generator_trip", "bus_fault")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown contingency kind {self.kind!r}")
        need = {"island": "cut", "line_trip": "branch", "generator_trip": "generator", "bus_fault": "bus"}
        attr = need.get(self.kind)
        if attr and getattr(self, attr) is None:
            raise ValueError(f"{self.kind} script needs {attr}")
        if self.kind == "bus_fault" and self.clearing_time is None:
            raise ValueError("bus_fault script needs clearing_time")

    @property
    def label(self) -> int:
        return 1 if self.kind == "island" else 0

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "t_c": self.t_c}
        if self.cut is not None:
            d["removed_branches"] = sorted(self.cut.removed_branches)
        for key in ("branch", "generator", "bus", "clearing_time"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.kind == "bus_fault":
            d["residual_voltage"] = self.residual_voltage
        return d


@dataclass(frozen=True, eq=False)
class AngleTrace:
    bus: BusId
    rate: float  # samples per second
    t0: float
    samples: np.ndarray  # degrees
    unwrapped: bool = True

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if len(self.samples) == 0:
            raise ValueError("empty trace")

    def __len__(self):
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.rate

    def with_samples(self, samples: np.ndarray, **kw) -> "AngleTrace":
        return AngleTrace(
            bus=kw.get("bus", self.bus),
            rate=kw.get("rate", self.rate),
            t0=kw.get("t0", self.t0),
            samples=np.asarray(samples, dtype=float),
            unwrapped=kw.get("unwrapped", self.unwrapped),
        )


@dataclass(frozen=True, eq=False)
class ScenarioRecord:
    id: str
    label: int
    t_c: float
    traces: Mapping[BusId, AngleTrace]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {(len(t), t.rate, t.t0) for t in self.traces.values()}
        if len(lengths) > 1:
            raise ValueError("traces must share rate, t0 and length")

    @property
    def buses(self) -> list[BusId]:
        return list(self.traces)

    def angles(self) -> np.ndarray:
        """(channels, samples) array in trace order."""
        return np.stack([t.samples for t in self.traces.values()])


# -- linear swing model ----------------------------------------------------------


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class _Model:
    """One network topology/operating state in reduced form.

    Machine electrical power is Pe = K @ delta + p0 and bus angles are
    theta = R @ delta + r (radians)."""

    machines: list[int]  # generator indices of the synchronous machines present
    K: np.ndarray
    p0: np.ndarray
    R: np.ndarray
    r: np.ndarray
    Pm: np.ndarray
    M: np.ndarray
    D: np.ndarray


def _dispatch(net: NetworkModel, load_scale: float) -> np.ndarray:
    """Per-generator output in MW: every unit runs at the same fraction of its
    rating so that generation balances the scaled load."""
    load = load_scale * sum(l.p_mw for l in net.loads)
    alpha = load / net.total_capacity
    return np.array([alpha * g.rated_mw for g in net.generators])


def _build(
    net: NetworkModel,
    load_scale: float,
    removed_branches: frozenset[int] = frozenset(),
    tripped: frozenset[int] = frozenset(),
    fault_bus: BusId | None = None,
    residual_voltage: float = 1.0,
) -> _Model:
    idx = net.bus_index
    n = len(net.buses)
    base = net.base_mva
    output = _dispatch(net, load_scale)
    machines = [i for i, g in enumerate(net.generators) if not g.inverter_based and i not in tripped]
    if not machines:
        raise SimulationError("no synchronous machine left")
    m = len(machines)
    live = [(b.frm, b.to) for k, b in enumerate(net.branches) if k not in removed_branches]
    anchored = {net.generators[i].bus for i in machines}
    for comp in components(net.buses, live):
        if not comp & anchored:
            raise SimulationError("an island has no synchronous machine")
    fb = idx[fault_bus] if fault_bus is not None else -1
    rho = residual_voltage

    L = np.zeros((n + m, n + m))

    def couple(a: int, b: int, y: float):
        L[a, a] += y
        L[b, b] += y
        L[a, b] -= y
        L[b, a] -= y

    for k, br in enumerate(net.branches):
        if k in removed_branches:
            continue
        a, b = idx[br.frm], idx[br.to]
        y = br.b_pu * (rho if fb in (a, b) else 1.0)
        couple(a, b, y)
    for j, gi in enumerate(machines):
        g = net.generators[gi]
        a = idx[g.bus]
        y = g.rated_mw / base / TRANSIENT_REACTANCE * (rho if a == fb else 1.0)
        couple(a, n + j, y)

    P = np.zeros(n)
    for l in net.loads:
        P[idx[l.bus]] -= load_scale * l.p_mw / base * (rho**2 if idx[l.bus] == fb else 1.0)
    for gi, g in enumerate(net.generators):
        if g.inverter_based:
            P[idx[g.bus]] += output[gi] / base * (rho if idx[g.bus] == fb else 1.0)

    Lnn, Lng = L[:n, :n], L[:n, n:]
    Lgn, Lgg = L[n:, :n], L[n:, n:]
    try:
        sol = np.linalg.solve(Lnn, np.column_stack([-Lng, P]))
    except np.linalg.LinAlgError as exc:
        raise SimulationError("network part without a synchronous machine") from exc
    R, r = sol[:, :m], sol[:, m]
    K = Lgg + Lgn @ R
    p0 = Lgn @ r
    gens = [net.generators[i] for i in machines]
    S = np.array([g.rated_mw / base for g in gens])
    return _Model(
        machines=machines,
        K=K,
        p0=p0,
        R=R,
        r=r,
        Pm=output[machines] / base,
        M=2.0 * np.array([g.H for g in gens]) * S,
        D=DAMPING * S,
    )


def _equilibrium(net: NetworkModel, model: _Model) -> np.ndarray:
    """Internal angles with zero accelerating power, shifted so the mean bus
    angle is zero."""
    mismatch = model.Pm - model.p0
    if abs(mismatch.sum()) > 1e-9 * max(1.0, np.abs(mismatch).max()):
        raise SimulationError("generation and load are not balanced")
    m = len(mismatch)
    delta = np.zeros(m)
    if m > 1:
        # machine 0 is the angle reference
        delta[1:] = np.linalg.solve(model.K[1:, 1:], mismatch[1:])
    delta -= (model.R @ delta + model.r).mean()
    theta = model.R @ delta + model.r
    idx = net.bus_index
    spread = max(
        (abs(theta[idx[b.frm]] - theta[idx[b.to]]) for b in net.branches), default=0.0
    )
    spread = max(spread, max(
        (abs(delta[j] - theta[idx[net.generators[g].bus]]) for j, g in enumerate(model.machines)),
        default=0.0,
    ))
    if spread >= math.pi / 2:
        raise SimulationError("no stable equilibrium: a branch angle reaches 90 degrees")
    return delta


def _affine_step(model: _Model, h: float, omega_s: float) -> tuple[np.ndarray, np.ndarray]:
    m = len(model.machines)
    A = np.zeros((2 * m, 2 * m))
    A[:m, m:] = omega_s * np.eye(m)
    A[m:, :m] = -model.K / model.M[:, None]
    A[m:, m:] = -np.diag(model.D / model.M)
    c = np.concatenate([np.zeros(m), (model.Pm - model.p0) / model.M])
    phi = rk4_step(lambda X: A @ X, np.eye(2 * m), h)
    offset = rk4_step(lambda x: A @ x + c, np.zeros(2 * m), h)
    return phi, offset


def simulate(
    net: NetworkModel,
    script: ContingencyScript,
    horizon: float = DEFAULT_HORIZON,
    dt: float = DEFAULT_DT,
    buses: Sequence[BusId] | None = None,
    load_scale: float = 1.0,
) -> dict[BusId, AngleTrace]:
    """True bus angle trajectories (degrees, unwrapped) at the integration rate."""
    if dt > 1.0 / 120.0 + 1e-15:
        raise ValueError("dt must not exceed 1/120 s")
    if script.kind != "none":
        if script.t_c < 1.0 - 1e-12:
            raise ValueError("need at least 1 s of pre-contingency data")
        if horizon < script.t_c + 2.0 - 1e-12:
            raise ValueError("horizon must extend 2 s past the contingency")
    buses = list(net.buses) if buses is None else list(buses)
    rows = [net.bus_index[b] for b in buses]
    omega_s = 2.0 * math.pi * net.base_frequency
    steps = int(round(horizon / dt))
    n_c = steps + 1 if script.kind == "none" else int(round(script.t_c / dt))

    pre = _build(net, load_scale)
    delta0 = _equilibrium(net, pre)
    x0 = np.concatenate([delta0, np.zeros(len(delta0))])

    phases: list[tuple[int, _Model]] = [(0, pre)]
    if script.kind == "island":
        phases.append((n_c, _build(net, load_scale, removed_branches=script.cut.removed_branches)))
    elif script.kind == "line_trip":
        phases.append((n_c, _build(net, load_scale, removed_branches=frozenset({script.branch}))))
    elif script.kind == "generator_trip":
        phases.append((n_c, _build(net, load_scale, tripped=frozenset({script.generator}))))
    elif script.kind == "bus_fault":
        faulted = _build(net, load_scale, fault_bus=script.bus, residual_voltage=script.residual_voltage)
        phases.append((n_c, faulted))
        phases.append((n_c + max(1, int(round(script.clearing_time / dt))), pre))

    theta = np.empty((steps + 1, len(rows)))
    x = x0
    model = pre
    for p, (start, model_p) in enumerate(phases):
        if start > steps:
            break
        end = phases[p + 1][0] if p + 1 < len(phases) else steps + 1
        end = min(end, steps + 1)
        if p > 0:
            x = _carry_state(model, model_p, x)
        model = model_p
        m = len(model.machines)
        phi, offset = _affine_step(model, dt, omega_s)
        # x holds the state at step `start`; states start..end-1 belong here
        states = np.empty((end - start, 2 * m))
        states[0] = x
        for k in range(1, end - start):
            x = phi @ x + offset
            states[k] = x
        if end <= steps:
            x = phi @ x + offset  # state at step `end`
        if not np.all(np.isfinite(states)) or np.abs(states[:, m:]).max() > 0.5:
            raise SimulationError("numerical blow-up")
        theta[start:end] = states[:, :m] @ model.R[rows].T + model.r[rows]

    deg = np.degrees(theta)
    rate = 1.0 / dt
    return {
        b: AngleTrace(bus=b, rate=rate, t0=0.0, samples=deg[:, i].copy(), unwrapped=True)
        for i, b in enumerate(buses)
    }


def _carry_state(old: _Model, new: _Model, x: np.ndarray) -> np.ndarray:
    """Map the machine state across a topology change (drops tripped units)."""
    m = len(old.machines)
    pos = {g: j for j, g in enumerate(old.machines)}
    keep = [pos[g] for g in new.machines]
    return np.concatenate([x[:m][keep], x[m:][keep]])


# -- scenario generation ---------------------------------------------------------


NON_ISLANDING_MIX = ("line_trip", "generator_trip", "bus_fault")


@dataclass(frozen=True)
class ScenarioSettings:
    horizon: float = DEFAULT_HORIZON
    dt: float = DEFAULT_DT
    t_c_range: tuple[float, float] = (1.0, 1.5)
    load_scale_range: tuple[float, float] = (0.9, 1.1)
    clearing_range: tuple[float, float] = (0.05, 0.2)
    residual_voltage_range: tuple[float, float] = (0.1, 0.5)
    max_cut_branches: int = 5
    max_cuts: int = 500
    max_retries: int = 20


def usable_cuts(
    net: NetworkModel, cuts: Sequence[IslandCut], pmu_buses: Sequence[BusId] | None = None
) -> list[IslandCut]:
    """Cuts whose islands both keep a synchronous machine (needed for a
    defined frequency) and, when PMU buses are given, both hold a PMU."""
    sync = {g.bus for g in net.generators if not g.inverter_based}
    pmus = set(pmu_buses) if pmu_buses is not None else None
    out = []
    for cut in cuts:
        if not (sync & cut.side_a and sync & cut.side_b):
            continue
        if pmus is not None and not (pmus & cut.side_a and pmus & cut.side_b):
            continue
        out.append(cut)
    return out


def _non_bridge_lines(net: NetworkModel) -> list[int]:
    out = []
    for k in net.line_ids():
        if len(apply_cut(net, [k])) == 1:
            out.append(k)
    return out


def _record_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


@dataclass(frozen=True)
class _Job:
    net: NetworkModel
    index: int
    kind: str
    seed: int
    cuts: tuple[IslandCut, ...]
    lines: tuple[int, ...]
    buses: tuple[BusId, ...]
    settings: ScenarioSettings
    wind_fraction: float = 0.0


def _draw_script(job: _Job, rng: np.random.Generator, dt: float) -> ContingencyScript:
    s = job.settings
    t_c = round(rng.uniform(*s.t_c_range) / dt) * dt
    net = job.net
    if job.kind == "island":
        return ContingencyScript("island", t_c, cut=job.cuts[rng.integers(len(job.cuts))])
    if job.kind == "line_trip":
        return ContingencyScript("line_trip", t_c, branch=int(job.lines[rng.integers(len(job.lines))]))
    if job.kind == "generator_trip":
        sync = [i for i, g in enumerate(net.generators) if not g.inverter_based]
        return ContingencyScript("generator_trip", t_c, generator=int(sync[rng.integers(len(sync))]))
    bus = net.buses[rng.integers(len(net.buses))]
    return ContingencyScript(
        "bus_fault",
        t_c,
        bus=bus,
        clearing_time=float(rng.uniform(*s.clearing_range)),
        residual_voltage=float(rng.uniform(*s.residual_voltage_range)),
    )


def _make_record(job: _Job) -> ScenarioRecord:
    from .measurement import resample_30hz

    rng = np.random.default_rng(_record_seed(job.seed, job.index))
    s = job.settings
    for attempt in range(s.max_retries):
        script = _draw_script(job, rng, s.dt)
        scale = float(rng.uniform(*s.load_scale_range))
        try:
            traces = simulate(job.net, script, s.horizon, s.dt, buses=job.buses, load_scale=scale)
        except SimulationError as exc:
            log.debug("record %d attempt %d discarded: %s", job.index, attempt, exc)
            continue
        traces = {b: resample_30hz(t) for b, t in traces.items()}
        return ScenarioRecord(
            id=f"{job.index:05d}",
            label=script.label,
            t_c=script.t_c,
            traces=traces,
            metadata={
                "network": job.net.name,
                "wind_fraction": job.wind_fraction,
                "script": script.to_dict(),
                "load_scale": scale,
                "seed": job.seed,
                "attempts": attempt + 1,
            },
        )
    raise SimulationError(f"record {job.index}: no valid draw after {s.max_retries} attempts")


def generate_scenarios(
    net: NetworkModel,
    counts: Mapping[str, int],
    wind_fraction: float = 0.0,
    seed: int = 0,
    pmu_buses: Sequence[BusId] | None = None,
    settings: ScenarioSettings = ScenarioSettings(),
    jobs: int = 1,
    cuts: Sequence[IslandCut] | None = None,
) -> list[ScenarioRecord]:
    """Labeled islanding / non-islanding records, a pure function of the inputs.

    counts: {"islanding": n1, "non_islanding": n2}. Records 0..n1-1 are islands
    drawn from the enumerated cuts; the rest cycle through line trips, generator
    trips and cleared bus faults in equal shares. Traces are 30 samples/s true
    angles at `pmu_buses` (all buses when omitted).
    """
    n1, n2 = int(counts["islanding"]), int(counts["non_islanding"])
    if n1 < 1 or n2 < 1:
        raise ValueError("need at least one record of each label")
    windy = apply_wind_penetration(net, wind_fraction)
    if cuts is None:
        cuts = enumerate_island_cuts(net, settings.max_cut_branches, settings.max_cuts)
    usable = usable_cuts(windy, cuts, pmu_buses)
    if not usable:
        raise SimulationError("no usable island cut for this network")
    lines = _non_bridge_lines(windy)
    buses = tuple(pmu_buses) if pmu_buses is not None else tuple(net.buses)
    kinds = ["island"] * n1 + [NON_ISLANDING_MIX[i % 3] for i in range(n2)]
    work = [
        _Job(windy, i, kind, seed, tuple(usable), tuple(lines), buses, settings, float(wind_fraction))
        for i, kind in enumerate(kinds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_make_record, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [_make_record(j) for j in work]


def check_label(net: NetworkModel, record: ScenarioRecord) -> bool:
    """Independent re-check that an islanding record really splits the grid."""
    script = record.metadata["script"]
    if record.label == 1:
        return script["kind"] == "island" and len(apply_cut(net, script["removed_branches"])) == 2
    return script["kind"] != "island"


# -- persistence -----------------------------------------------------------------


def save_scenarios(records: Sequence[ScenarioRecord], directory: str | Path, manifest: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for rec in records:
        write_trace_csv(d / f"{rec.id}.csv", rec.traces)
        sidecar = {"id": rec.id, "label": rec.label, "t_c": rec.t_c, "metadata": rec.metadata}
        (d / f"{rec.id}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return d


def write_trace_csv(path: Path, traces: Mapping[BusId, AngleTrace]) -> None:
    first = next(iter(traces.values()))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + [f"bus_{b}_deg" for b in traces])
        cols = np.column_stack([first.times] + [t.samples for t in traces.values()])
        for row in cols:
            w.writerow([repr(float(v)) for v in row])


def read_trace_csv(path: Path, unwrapped: bool = True) -> dict[BusId, AngleTrace]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    t = data[:, 0]
    rate = 1.0 / float(np.round(t[1] - t[0], 12)) if len(t) > 1 else 30.0
    out = {}
    for j, name in enumerate(header[1:], start=1):
        bus = int(name.removeprefix("bus_").removesuffix("_deg"))
        out[bus] = AngleTrace(bus, round(rate, 9), float(t[0]), data[:, j], unwrapped)
    return out


def load_scenarios(directory: str | Path) -> tuple[dict, list[ScenarioRecord]]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    records = []
    for side in sorted(d.glob("[0-9]*.json")):
        meta = json.loads(side.read_text())
        traces = read_trace_csv(d / f"{meta['id']}.csv")
        records.append(ScenarioRecord(meta["id"], meta["label"], meta["t_c"], traces, meta["metadata"]))
    return manifest, records
