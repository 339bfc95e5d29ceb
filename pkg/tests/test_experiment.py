import dataclasses
import json

import numpy as np
import pytest

from cuspad import experiment as ex
from cuspad.classifier import EvalReport

TINY = ex.ExperimentConfig(
    network="net18",
    wind_fractions=(0.16,),
    instr_ranges=(0.0,),
    trials=3,
    max_depth=3,
    islanding=10,
    non_islanding=12,
    seed=5,
)


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    return tmp_path_factory.mktemp("cache")


def test_grid_cell_count(cache):
    grid = ex.run_accuracy_grid(TINY, cache)
    assert len(grid.cells) == 2
    assert {m for _, _, m in grid.cells} == {"AD", "CUSPAD"}
    rep = grid.cell(0.16, 0.0, "CUSPAD")
    assert rep.trials == 3 and 0 <= rep.mean_accuracy <= 100


def test_grid_deterministic(cache, tmp_path):
    a = ex.run_accuracy_grid(TINY, cache).to_dict()
    b = ex.run_accuracy_grid(TINY, tmp_path).to_dict()  # fresh simulation
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_window_entry_equals_grid_cell(cache):
    grid = ex.run_accuracy_grid(TINY, cache)
    sweep = ex.run_window_sweep(TINY, [30], instr_range=0.0, cache_dir=cache)
    assert sweep[30].per_trial == grid.cell(0.16, 0.0, "CUSPAD").per_trial


def test_window_size_range():
    with pytest.raises(ValueError):
        ex.run_window_sweep(TINY, [4, 30])


def test_dataset_cache_hit(cache):
    buses = ex.resolve_pmu_buses(TINY)
    a = ex.build_dataset(TINY, 0.16, buses, cache)
    b = ex.build_dataset(TINY, 0.16, buses, cache)
    assert a.key == b.key
    np.testing.assert_array_equal(a.angles, b.angles)
    assert a.kinds == b.kinds
    assert a.angles.shape == (22, len(buses), 4 * 30 + 1)  # both ends of the 4 s horizon
    assert len(a.pair_names) == len(buses) * (len(buses) - 1) // 2


def test_dataset_key_tracks_inputs():
    buses = (1, 11, 14, 23, 31)
    k = ex.dataset_key(TINY, 0.16, buses)
    assert k != ex.dataset_key(dataclasses.replace(TINY, seed=6), 0.16, buses)
    assert k != ex.dataset_key(TINY, 0.2, buses)
    assert k != ex.dataset_key(TINY, 0.16, buses[:-1])
    # evaluation-only settings do not invalidate simulated data
    assert k == ex.dataset_key(dataclasses.replace(TINY, trials=9), 0.16, buses)


def test_config_roundtrip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY.to_dict()))
    back = ex.ExperimentConfig.from_json(path)
    assert back == TINY and back.config_hash == TINY.config_hash
    assert dataclasses.replace(TINY, w=20).config_hash != TINY.config_hash
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({**TINY.to_dict(), "colour": "red"})


@pytest.mark.parametrize(
    "bad",
    [dict(wind_fractions=(1.2,)), dict(instr_ranges=(-1.0,)), dict(modes=("XX",)), dict(trials=0), dict(islanding=0)],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        dataclasses.replace(TINY, **bad)


def test_presets_match_studies():
    p18, p118 = ex.PRESETS["net18"], ex.PRESETS["net118"]
    assert (p18.islanding, p18.non_islanding, p18.max_depth) == (200, 267, 5)
    assert (p118.islanding + p118.non_islanding, p118.max_depth) == (2000, 4)
    assert p118.wind_fractions == (0.1, 0.2, 0.3)
    assert p18.instr_ranges == (0.0, 0.1, 1.0, 2.0, 4.0) and p18.trials == 50 and p18.w == 30


def report(acc, half=0.1):
    return EvalReport(acc, half, (acc,) * 3, 4)


def fake_grid(ad, cu):
    cfg = dataclasses.replace(TINY, instr_ranges=(0.0, 0.1, 1.0, 2.0, 4.0))
    grid = ex.ResultsGrid(cfg, (1, 2))
    for lvl, a, c in zip(cfg.instr_ranges, ad, cu):
        grid.cells[(0.16, lvl, "AD")] = report(a)
        grid.cells[(0.16, lvl, "CUSPAD")] = report(c)
    return grid


def test_trend_check_pass_and_fail():
    good = fake_grid([99, 95, 90, 85, 80], [98, 98, 97.5, 98, 97.2])
    assert ex.trend_check("t", good, 0.16, 2.0, 15.0).passed
    flat_ad = fake_grid([99, 99, 98, 97, 96], [98] * 5)
    assert not ex.trend_check("t", flat_ad, 0.16, 2.0, 15.0).passed
    moving_cu = fake_grid([99, 95, 90, 85, 80], [98, 97, 96, 95, 94])
    assert not ex.trend_check("t", moving_cu, 0.16, 2.0, 15.0).passed
    rising = fake_grid([99, 70, 80, 75, 70], [98] * 5)
    assert not ex.trend_check("t", rising, 0.16, 2.0, 15.0).passed


def test_window_check():
    assert ex.window_check({20: report(90), 30: report(94), 40: report(95)}).passed
    assert not ex.window_check({20: report(90), 30: report(91), 40: report(95)}).passed


def test_table_layout(cache):
    grid = ex.run_accuracy_grid(TINY, cache)
    head = grid.table(0.16).splitlines()[0]
    assert [c.strip() for c in head.strip("|").split("|")] == [
        "Error", "AD Accuracy (95%)", "Depth", "CUSPAD Accuracy (95%)", "Depth"
    ]


def test_refuses_foreign_output_dir(tmp_path):
    (tmp_path / "precious.txt").write_text("keep me")
    with pytest.raises(FileExistsError):
        ex.reproduce_all(tmp_path, configs={"net18": TINY})
    assert (tmp_path / "precious.txt").exists()
