"""PMU measurement model: 30 samples/s reporting, additive Gaussian device
error, a fixed per-channel instrumentation offset, and angle unwrapping."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .dynamics_sim import AngleTrace, ScenarioRecord, write_trace_csv
from .grid_model import BusId

PMU_RATE = 30
PMU_SIGMA_DEG = 0.104
INSTRUMENTATION_LEVELS = (0.0, 0.1, 1.0, 2.0, 4.0)


def wrap_deg(x):
    """Map angles into (-180, 180]."""
    return 180.0 - np.mod(180.0 - np.asarray(x, dtype=float), 360.0)


def unwrap_deg(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Remove 360-degree jumps so consecutive deltas lie in (-180, 180].

    Each output sample is the input plus an integer multiple of 360, so the
    result is congruent to the input sample by sample and picks up a single
    rounding error at most."""
    x = np.asarray(x, dtype=float)
    d = np.diff(x, axis=axis)
    turns = np.rint((wrap_deg(d) - d) / 360.0)
    k = np.cumsum(turns, axis=axis)
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 0)
    k = np.pad(k, pad)
    return x + 360.0 * k


def unwrap(trace: AngleTrace) -> AngleTrace:
    return trace.with_samples(unwrap_deg(trace.samples), unwrapped=True)


def resample_30hz(trace: AngleTrace) -> AngleTrace:
    factor = trace.rate / PMU_RATE
    step = int(round(factor))
    if step < 1 or abs(factor - step) > 1e-9 * factor:
        raise ValueError(f"rate {trace.rate} is not an integer multiple of {PMU_RATE}")
    if step == 1:
        return trace
    return trace.with_samples(trace.samples[::step], rate=float(PMU_RATE))


@dataclass(frozen=True)
class ChannelErrorModel:
    pmu_sigma: float = PMU_SIGMA_DEG  # degrees, std of per-sample device error
    instr_range: float = 0.0  # degrees, half-width of the fixed offset's uniform law

    def __post_init__(self):
        if self.pmu_sigma < 0 or self.instr_range < 0:
            raise ValueError("error magnitudes must be non-negative")

    @property
    def tag(self) -> str:
        return f"instr{self.instr_range:g}_sigma{self.pmu_sigma:g}".replace(".", "p")


@dataclass(frozen=True, eq=False)
class MeasuredScenario:
    base: ScenarioRecord
    traces: Mapping[BusId, AngleTrace]
    offsets: Mapping[BusId, float]
    seed: int | None

    @property
    def label(self) -> int:
        return self.base.label


def draw_errors(
    rng: np.random.Generator, model: ChannelErrorModel, shape: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray]:
    """(offsets, noise) for an array of shape (..., channels, samples).

    Offsets are drawn first, one per channel, then the per-sample noise."""
    offsets = rng.uniform(-model.instr_range, model.instr_range, size=shape[:-1])
    noise = rng.normal(0.0, model.pmu_sigma, size=shape) if model.pmu_sigma > 0 else np.zeros(shape)
    return offsets, noise


def corrupt(true: np.ndarray, offsets: np.ndarray, noise: np.ndarray, report_wrapped: bool = False) -> np.ndarray:
    if report_wrapped:
        # the device sees the angle modulo one turn; folding first keeps the
        # additions on small numbers
        return wrap_deg(wrap_deg(true) + offsets[..., None] + noise)
    return true + offsets[..., None] + noise


def inject_errors(
    scenario: ScenarioRecord,
    model: ChannelErrorModel,
    seed: int | np.random.SeedSequence | None,
    report_wrapped: bool = False,
) -> MeasuredScenario:
    """measured = true + fixed offset + Gaussian noise, per channel.

    With report_wrapped the angles are folded into (-180, 180] the way a PMU
    reports them; feature extraction unwraps them again."""
    buses = scenario.buses
    true = scenario.angles()
    rng = np.random.default_rng(seed)
    offsets, noise = draw_errors(rng, model, true.shape)
    measured = corrupt(true, offsets, noise, report_wrapped)
    traces = {
        b: scenario.traces[b].with_samples(measured[i], unwrapped=not report_wrapped)
        for i, b in enumerate(buses)
    }
    return MeasuredScenario(
        base=scenario,
        traces=traces,
        offsets={b: float(offsets[i]) for i, b in enumerate(buses)},
        seed=seed if isinstance(seed, int) else None,
    )


def save_measured(ms: MeasuredScenario, directory: str | Path, model: ChannelErrorModel) -> Path:
    """Write `<id>_measured_<tag>.csv` plus an offsets sidecar next to the base
    record. Offsets are kept for audit only."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{ms.base.id}_measured_{model.tag}"
    write_trace_csv(d / f"{stem}.csv", ms.traces)
    sidecar = {
        "id": ms.base.id,
        "seed": ms.seed,
        "pmu_sigma": model.pmu_sigma,
        "instr_range": model.instr_range,
        "offsets_deg": {str(b): v for b, v in ms.offsets.items()},
    }
    (d / f"{stem}.offsets.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return d / f"{stem}.csv"


def inject_batch(
    true: np.ndarray, model: ChannelErrorModel, rng: np.random.Generator, report_wrapped: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt a (scenarios, channels, samples) stack in one draw; returns
    (measured, offsets)."""
    offsets, noise = draw_errors(rng, model, true.shape)
    return corrupt(true, offsets, noise, report_wrapped), offsets
