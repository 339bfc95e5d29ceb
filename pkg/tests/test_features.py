import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuspad.dynamics_sim import AngleTrace, ScenarioRecord, generate_scenarios
from cuspad.features import (
    AD,
    CUSPAD,
    DEFAULT_JUMP_THRESHOLD,
    FeatureConfig,
    InsufficientSamples,
    ReferencePoint,
    ResidualMonitor,
    angle_difference,
    batch_features,
    calibrate_jump_threshold,
    canonical_pairs,
    cuspad_pair,
    cuspad_sum,
    detect_reference,
    extract_features,
    false_detection_rate,
    read_features_csv,
    residual,
    residual_series,
    tsqpa_predict,
    write_features_csv,
)
from cuspad.grid_model import bundled_network, make_network
from cuspad.measurement import ChannelErrorModel, inject_errors, wrap_deg


def trace(x, unwrapped=True):
    return AngleTrace(1, 30.0, 0.0, np.asarray(x, dtype=float), unwrapped)


def step_trace(n=120, at=40, size=5.0, base=12.0):
    x = np.full(n, base)
    x[at:] += size
    return x


# -- elementary operations --------------------------------------------------------


def test_angle_difference_examples():
    assert angle_difference(10.0, 10.0) == 0.0
    assert angle_difference(179.0, -179.0) == pytest.approx(-2.0)


def test_angle_difference_offsets():
    a, b, ea, eb = 33.0, -71.5, 2.5, -3.25
    assert angle_difference(a + ea, b + eb, wrapped=False) == (a - b) + (ea - eb)


def test_tsqpa_examples():
    assert tsqpa_predict(7.0, 7.0, 7.0) == 7.0
    assert tsqpa_predict(9, 4, 1) == 16
    assert tsqpa_predict(27, 8, 1) == 58
    assert tsqpa_predict(27, 8, 1) - 64 == -6
    c = np.exp(0.3j)
    assert tsqpa_predict(c, c, c) == pytest.approx(c)


def test_residual_examples():
    assert residual(5.0, 5.0) == 0.0
    r = residual_series(step_trace(at=40))
    assert r[40] == pytest.approx(-5.0)
    assert np.all(np.abs(r[3:40]) < 1e-9)


def test_steady_stream_residual():
    net = bundled_network("net18")
    rec = generate_scenarios(net, {"islanding": 1, "non_islanding": 1}, seed=2, pmu_buses=[1, 11])[1]
    t_c = int(round(rec.t_c * 30))
    for tr in rec.traces.values():
        assert np.nanmax(np.abs(residual_series(tr.samples)[: t_c - 1])) < 1e-9


def test_phasor_predictor_close_but_not_exact():
    # a quadratic angle is not a quadratic phasor: only the angle form is exact
    x = 3.0 + 0.5 * np.arange(60) + 0.01 * np.arange(60) ** 2
    ra, rp = residual_series(x, "angle"), residual_series(x, "phasor")
    np.testing.assert_allclose(ra[3:], 0, atol=1e-9)
    assert 0 < np.abs(rp[3:]).max() < 0.01
    with pytest.raises(ValueError):
        residual_series(x, "spline")


def test_monitor_matches_batch():
    x = step_trace(size=7.0) + np.linspace(0, 500, 120)
    mon = ResidualMonitor(jump_threshold=2.0)
    for v in wrap_deg(x):
        mon.push(float(v))
    np.testing.assert_allclose(mon.history, residual_series(x)[3:], atol=1e-9)
    assert mon.jump_at == 40


# -- reference detection -----------------------------------------------------------


def test_detect_constant_is_none():
    assert detect_reference(trace(np.full(60, 3.0)), 1.0) is None


def test_detect_step():
    ref = detect_reference(trace(step_trace(at=40)), 1.0)
    assert ref == ReferencePoint(39, 12.0)


def test_detect_too_short():
    with pytest.raises(InsufficientSamples):
        detect_reference(trace([1.0, 2.0, 3.0]), 1.0)


def test_default_threshold_false_detection():
    assert false_detection_rate(DEFAULT_JUMP_THRESHOLD, n_streams=1000, seed=7) < 0.01


def test_one_degree_threshold_too_sensitive():
    # at sigma = 0.104 the three-point residual has std of about 0.47 deg
    assert false_detection_rate(1.0, n_streams=1000, seed=7) > 0.5


def test_calibration_reproduces_default():
    thr = calibrate_jump_threshold(seed=0)
    assert 1.6 <= thr <= DEFAULT_JUMP_THRESHOLD
    assert false_detection_rate(thr, seed=0) < 0.01


# -- sums and pairs ------------------------------------------------------------------


def test_cuspad_sum_examples():
    assert cuspad_sum(trace(np.full(80, 2.0)), ReferencePoint(10, 2.0), 30) == 0.0
    x = np.zeros(80)
    x[11:] = 1.0
    assert cuspad_sum(trace(x), ReferencePoint(10, 0.0), 30) == 30.0


def test_cuspad_sum_needs_window():
    with pytest.raises(InsufficientSamples):
        cuspad_sum(trace(np.zeros(40)), ReferencePoint(10, 0.0), 30)


def test_cuspad_pair_examples():
    assert cuspad_pair(12.5, 12.5) == 0.0
    assert cuspad_pair(30.0, 0.0) == 30.0


def test_canonical_pairs():
    assert len(canonical_pairs([31, 1, 23, 14, 11])) == 10
    assert canonical_pairs([3, 1, 2]) == [(1, 2), (1, 3), (2, 3)]


@given(
    st.integers(0, 2**32 - 1),
    st.floats(-10, 10),
    st.integers(20, 80),
    st.integers(5, 30),
)
def test_offset_invariance(seed, c, at, w):
    rng = np.random.default_rng(seed)
    x = np.full(120, rng.uniform(-180, 180))
    t = np.arange(120 - at)
    x[at:] += rng.choice([-1, 1]) * rng.uniform(2, 20) + rng.uniform(-3, 3) * t / 30
    r0, r1 = residual_series(x), residual_series(x + c)
    np.testing.assert_allclose(r1[3:], r0[3:], atol=1e-12)
    ref0, ref1 = detect_reference(trace(x), 1.0), detect_reference(trace(x + c), 1.0)
    assert ref0.t_ref == ref1.t_ref == at - 1
    s0, s1 = cuspad_sum(trace(x), ref0, w), cuspad_sum(trace(x + c), ref1, w)
    assert abs(s1 - s0) <= 1e-9 * (1 + abs(s0))


@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.integers(0, 2**16))
def test_quadratic_residual_zero(coef, seed):
    a0, a1, a2, _ = coef
    n = np.arange(40, dtype=float)
    x = a0 + a1 * n / 10 + a2 * (n / 10) ** 2 / 10
    assert np.nanmax(np.abs(residual_series(x))) < 1e-9


# -- feature vectors --------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_set():
    net = bundled_network("net18")
    return generate_scenarios(
        net, {"islanding": 6, "non_islanding": 9}, wind_fraction=0.16, seed=4, pmu_buses=[1, 11, 14, 23, 31]
    )


def test_five_buses_ten_pairs(small_set):
    fv = extract_features(small_set[0], CUSPAD)
    assert len(fv.values) == 10 and len(fv.names) == 10
    assert fv.as_dict()[(1, 11)] == fv.values[0]


def test_offsets_leave_cuspad_move_ad(small_set):
    for rec in small_set:
        m = inject_errors(rec, ChannelErrorModel(0.0, 4.0), seed=8)
        c0, c1 = extract_features(rec, CUSPAD), extract_features(m, CUSPAD)
        np.testing.assert_allclose(c1.values, c0.values, atol=1e-6)
        a0, a1 = extract_features(rec, AD), extract_features(m, AD)
        assert np.all(np.abs(a1.values - a0.values) <= 8.0 + 1e-9)
    moved = [
        np.abs(extract_features(inject_errors(r, ChannelErrorModel(0.0, 4.0), seed=8), AD).values
               - extract_features(r, AD).values).max()
        for r in small_set
    ]
    assert max(moved) > 0.5


def test_batch_equals_scalar(small_set):
    A = np.stack([r.angles() for r in small_set])
    for mode in (AD, CUSPAD):
        for cfg in (FeatureConfig(mode), FeatureConfig(mode, w=12, ad_aggregate="mean", cuspad_absolute=True)):
            X, failed, t_ref = batch_features(wrap_deg(A), cfg)
            for i, rec in enumerate(small_set):
                fv = extract_features(
                    rec, mode, cfg.w, cfg.jump_threshold, ad_aggregate=cfg.ad_aggregate,
                    cuspad_absolute=cfg.cuspad_absolute,
                )
                np.testing.assert_allclose(X[i], fv.values, atol=1e-9)
                assert failed[i] == fv.detection_failed
                assert (t_ref[i] if not failed[i] else None) == fv.t_ref


def test_no_jump_gives_zero_vector():
    traces = {b: AngleTrace(b, 30.0, 0.0, np.full(120, 10.0 * b)) for b in (1, 2, 3)}
    fv = extract_features(ScenarioRecord("x", 0, 1.0, traces), AD)
    assert fv.detection_failed and fv.t_ref is None
    assert np.all(fv.values == 0)


def test_toy_island_separable():
    # unequal inertia, so the two islands drift at different rates
    net = make_network(
        [1, 2, 3, 4],
        [(1, 2, "line", 8.0), (2, 3, "line", 8.0), (3, 4, "line", 8.0), (4, 1, "line", 8.0)],
        [(1, 2.0, 100.0), (3, 8.0, 100.0)],
        [(2, 60.0), (4, 110.0)],
    )
    recs = generate_scenarios(net, {"islanding": 8, "non_islanding": 12}, seed=1, pmu_buses=[1, 3])
    vals = np.array([abs(extract_features(r, CUSPAD).values[0]) for r in recs])
    labels = np.array([r.label for r in recs])
    assert vals[labels == 1].min() > vals[labels == 0].max()


def test_csv_roundtrip(tmp_path):
    X = np.array([[1.5, -2.25], [0.0, 3.0]])
    path = tmp_path / "f.csv"
    write_features_csv(path, ["1-2", "1-3"], X, [1, 0], [False, True])
    names, X2, y, failed = read_features_csv(path)
    assert names == ["1-2", "1-3"]
    np.testing.assert_array_equal(X2, X)
    assert y.tolist() == [1, 0] and failed.tolist() == [False, True]


def test_bad_config():
    with pytest.raises(ValueError):
        FeatureConfig("XYZ")
    with pytest.raises(ValueError):
        FeatureConfig(AD, ad_aggregate="median")
