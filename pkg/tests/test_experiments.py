import json
import math

import numpy as np
import pytest

from fdpcox.breslow import HazardEstimate, HazardTree, tree_levels
from fdpcox.datagen import CoxModelSpec
from fdpcox.experiments import (
    CSV_COLUMNS,
    EPSILON_GRID,
    PRESETS,
    ResultRow,
    Scenario,
    Tuning,
    beta_sq_error,
    emit_csv,
    hazard_sup_error,
    mean_by,
    preset,
    read_csv,
    run_scenario,
)

SPEC = CoxModelSpec.paper_default()


def _flat_estimate(h, leaf_value):
    tree = HazardTree(h, tree_levels(np.full(2**h, leaf_value)), 0.0, 1.0)
    return HazardEstimate([tree], np.array([1.0]))


def test_beta_sq_error_examples():
    assert beta_sq_error([0, 0.5, 0.8], [0, 0.5, 0.8]) == 0
    assert beta_sq_error([1, 0], [0, 0]) == 1
    assert beta_sq_error([0.1, 0.5, 0.8], [0, 0.5, 0.8]) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        beta_sq_error([1, 0], [0, 0, 0])


def test_hazard_sup_error_examples():
    exact = hazard_sup_error(_flat_estimate(4, 1 / 16), SPEC)
    assert float(exact) == pytest.approx(0.0, abs=1e-15)
    assert exact.upper == pytest.approx(1 / 16)
    zero = hazard_sup_error(_flat_estimate(3, 0.0), SPEC)
    assert float(zero) == 1.0


def _small(**kw):
    base = dict(name="t", spec=SPEC, grid={"n": (300,), "epsilon": (2.0,)}, replications=2, seed=3)
    base.update(kw)
    return Scenario(**base)


def test_scenario_validation():
    with pytest.raises(ValueError):
        _small(replications=0)
    with pytest.raises(ValueError):
        _small(grid={"n": (), "epsilon": (1.0,)})
    with pytest.raises(ValueError):
        _small(grid={"n": (10,), "epsilon": (1.0,), "colour": (1,)})
    with pytest.raises(ValueError):
        _small(beta_source="oracle")


def test_scenario_json_round_trip():
    sc = preset("censoring-study", scale=0.05, seed=4)
    assert Scenario.from_json(sc.to_json()) == sc


def test_presets_match_published_grids():
    assert set(PRESETS) == {
        "cdp-beta-grid", "cdp-hazard-grid", "dimension-study", "sensitivity-noise",
        "sensitivity-step", "censoring-study", "fdp-grid", "interactive-grid",
    }
    full = {name: f() for name, f in PRESETS.items()}
    assert full["cdp-beta-grid"].grid["n"] == tuple(range(20000, 50001, 5000))
    assert full["cdp-beta-grid"].grid["epsilon"] == (0.75, 1, 2, 3, 4, 5, 6)
    assert full["dimension-study"].grid["dimension"] == tuple(range(2, 9))
    assert full["dimension-study"].grid["n"] == (30000,)
    np.testing.assert_allclose(full["sensitivity-noise"].grid["noise_constant"],
                               [0.005, 0.0075, 0.01, 0.0125, 0.015, 0.0175, 0.02])
    assert full["sensitivity-step"].grid["step_size"] == (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    assert full["censoring-study"].grid["censoring_rate"] == (0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3)
    assert full["fdp-grid"].grid["servers"] == (2, 4, 8, 12, 16, 20)
    assert full["fdp-grid"].grid["n"] == (25000,)
    assert full["interactive-grid"].grid["servers"] == tuple(range(2, 9))
    assert full["interactive-grid"].grid["n"] == (10000,)
    assert all(sc.points()[0]["delta"] == 0.001 for sc in full.values())


def test_scaling():
    sc = preset("cdp-beta-grid", scale=0.1)
    assert sc.grid["n"] == (2000, 2500, 3000, 3500, 4000, 4500, 5000)
    assert sc.replications == 20
    assert preset("cdp-beta-grid", scale=0.1, replications=50).replications == 50


def test_row_count_for_beta_grid():
    sc = preset("cdp-beta-grid", scale=0.005, replications=1)
    rows = list(run_scenario(sc))
    assert len(rows) == 49 and {r.metric for r in rows} == {"beta_sq_error"}
    # grid-major, replication-minor
    assert [(r.point["n"], r.point["epsilon"]) for r in rows[:2]] == [(100, 0.75), (100, 1.0)]


def test_determinism_and_order():
    sc = _small(tasks=("beta", "hazard"))
    a, b = list(run_scenario(sc)), list(run_scenario(sc))
    assert [(r.metric, r.value) for r in a] == [(r.metric, r.value) for r in b]
    assert [r.replication for r in a] == [0, 0, 0, 0, 1, 1, 1, 1]
    assert all(np.isfinite(r.value) for r in a)


def test_parallel_matches_serial(tmp_path):
    sc = _small(grid={"n": (200, 300), "epsilon": (1.0, 3.0)}, tasks=("hazard",))
    emit_csv(run_scenario(sc), tmp_path / "a.csv")
    emit_csv(run_scenario(sc, workers=2), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_invalid_grid_point_is_reported_not_fatal():
    # the central algorithm cannot run on two servers
    sc = _small(grid={"n": (300,), "epsilon": (1.0,), "servers": (2, 1)})
    rows = list(run_scenario(sc))
    bad = [r for r in rows if r.point["servers"] == 2]
    good = [r for r in rows if r.point["servers"] == 1]
    assert bad and all(r.error and math.isnan(r.value) for r in bad)
    assert good and all(r.error is None for r in good)


def test_common_random_numbers_across_epsilon():
    sc = _small(grid={"n": (400,), "epsilon": (1.0, 2.0, 4.0)}, replications=1,
                tuning=Tuning(noise_multiplier=0.0))
    values = [r.value for r in run_scenario(sc)]
    assert values[0] == values[1] == values[2]


def test_oracle_beta_hazard_only():
    sc = _small(tasks=("hazard",), beta_source="oracle")
    assert sc.metrics() == ("hazard_sup_error", "survival_sup_error", "p_hat_error")
    rows = list(run_scenario(sc))
    assert [r.metric for r in rows[:3]] == list(sc.metrics())
    assert rows[0].upper > rows[0].value


def test_dimension_study_draws_beta_per_dimension():
    sc = preset("dimension-study", scale=0.01, replications=1).with_grid(epsilon=(6.0,), dimension=(2, 5))
    rows = list(run_scenario(sc))
    assert len(rows) == 2 and all(r.error is None for r in rows)


def test_noise_constant_changes_noise():
    sc = _small(grid={"n": (400,), "epsilon": (1.0,), "noise_constant": (0.005, 0.02)}, replications=1)
    rows = list(run_scenario(sc))
    assert rows[0].value != rows[1].value


def test_emit_csv_examples(tmp_path):
    path = tmp_path / "empty.csv"
    assert emit_csv([], path) == 0
    assert path.read_text().splitlines() == [",".join(CSV_COLUMNS)]
    rows = list(run_scenario(_small(replications=3)))
    path = tmp_path / "rows.csv"
    emit_csv(rows, path)
    assert len(path.read_text().splitlines()) == 4
    back = read_csv(path)
    assert [(r.value, r.point, r.metric, r.replication) for r in back] == [
        (r.value, r.point, r.metric, r.replication) for r in rows
    ]


def test_emit_csv_quotes_errors(tmp_path):
    row = ResultRow("s", {"n": 1, "epsilon": 1.0}, 0, "beta_sq_error", math.nan, 0.0, None, 'ValueError: a, "b"')
    path = tmp_path / "e.csv"
    emit_csv([row], path, include_runtime=True)
    back = read_csv(path)
    assert back[0].error == 'ValueError: a, "b"' and math.isnan(back[0].value)


def test_mean_by():
    rows = [ResultRow("s", {"n": 1}, r, "beta_sq_error", float(r)) for r in range(4)]
    assert mean_by(rows, "beta_sq_error", "n") == {(1,): 1.5}
