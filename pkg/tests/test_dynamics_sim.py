import numpy as np
import pytest

from cuspad.dynamics_sim import (
    ContingencyScript,
    check_label,
    generate_scenarios,
    load_scenarios,
    save_scenarios,
    simulate,
    usable_cuts,
)
from cuspad.grid_model import bundled_network, enumerate_island_cuts, generators_by_side

PMUS = [1, 11, 14, 23, 31]


@pytest.fixture(scope="module")
def net18():
    return bundled_network("net18")


def test_equilibrium_holds(net18):
    traces = simulate(net18, ContingencyScript("none", 0.0), horizon=4.0)
    for tr in traces.values():
        assert np.abs(tr.samples - tr.samples[0]).max() < 1e-6


def test_island_drifts_apart(net18):
    cut = usable_cuts(net18, enumerate_island_cuts(net18))[0]
    traces = simulate(net18, ContingencyScript("island", 1.0, cut=cut), horizon=4.0)
    t = next(iter(traces.values())).times
    a = np.mean([traces[b].samples for b in traces if b in cut.side_a], axis=0)
    b = np.mean([traces[b].samples for b in traces if b in cut.side_b], axis=0)
    gap = np.abs(a - b)
    late = gap[t > 2.0]
    # separation keeps growing after the split
    assert late[-1] > late[0] + 20.0
    assert np.all(np.diff(gap[t > 3.0]) > 0)


@pytest.mark.parametrize("gen", range(7))
def test_generator_trip_stays_bounded(net18, gen):
    traces = simulate(net18, ContingencyScript("generator_trip", 1.0, generator=gen), horizon=20.0)
    A = np.stack([tr.samples for tr in traces.values()])
    spread = A.max(axis=0) - A.min(axis=0)
    t = next(iter(traces.values())).times
    assert spread.max() < 90.0
    # the inter-area swing decays: late oscillation well below the first swings
    assert np.ptp(spread[t > 17.0]) < 0.3 * np.ptp(spread[(t > 1.0) & (t < 4.0)])


def test_bus_fault_recovers(net18):
    s = ContingencyScript("bus_fault", 1.0, bus=14, clearing_time=0.1, residual_voltage=0.3)
    traces = simulate(net18, s, horizon=4.0)
    A = np.stack([tr.samples for tr in traces.values()])
    spread = A.max(axis=0) - A.min(axis=0)
    assert spread.max() < 120.0


def test_script_validation():
    with pytest.raises(ValueError):
        ContingencyScript("island", 1.0)
    with pytest.raises(ValueError):
        ContingencyScript("meteor", 1.0)
    with pytest.raises(ValueError):
        ContingencyScript("bus_fault", 1.0, bus=1)


def test_simulate_rejects_short_prefix(net18):
    with pytest.raises(ValueError):
        simulate(net18, ContingencyScript("generator_trip", 0.5, generator=0))


def test_determinism(net18):
    a = generate_scenarios(net18, {"islanding": 1, "non_islanding": 1}, seed=9, pmu_buses=PMUS)
    b = generate_scenarios(net18, {"islanding": 1, "non_islanding": 1}, seed=9, pmu_buses=PMUS)
    for ra, rb in zip(a, b):
        assert ra.angles().tobytes() == rb.angles().tobytes()
        assert ra.metadata == rb.metadata


def test_net18_counts_and_labels(net18):
    recs = generate_scenarios(net18, {"islanding": 200, "non_islanding": 267}, wind_fraction=0.16, seed=3, pmu_buses=PMUS)
    assert len(recs) == 467
    assert sum(r.label for r in recs) == 200
    assert all(check_label(net18, r) for r in recs)
    kinds = [r.metadata["script"]["kind"] for r in recs if r.label == 0]
    assert {k: kinds.count(k) for k in set(kinds)} == {"line_trip": 89, "generator_trip": 89, "bus_fault": 89}
    for r in recs:
        assert r.buses == PMUS
        assert all(tr.rate == 30.0 for tr in r.traces.values())
        assert 1.0 <= r.t_c <= 1.5


def test_islands_keep_synchronous_machines(net18):
    windy_cuts = usable_cuts(net18, enumerate_island_cuts(net18), PMUS)
    for cut in windy_cuts:
        a, b = generators_by_side(net18, cut, synchronous_only=True)
        assert a and b
        assert set(PMUS) & cut.side_a and set(PMUS) & cut.side_b


def test_save_load_roundtrip(net18, tmp_path):
    recs = generate_scenarios(net18, {"islanding": 1, "non_islanding": 2}, seed=1, pmu_buses=PMUS)
    save_scenarios(recs, tmp_path, {"network": "net18"})
    manifest, back = load_scenarios(tmp_path)
    assert manifest["network"] == "net18"
    for r, s in zip(recs, back):
        assert r.id == s.id and r.label == s.label
        np.testing.assert_array_equal(r.angles(), s.angles())
