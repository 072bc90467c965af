import json

import numpy as np
import pytest

from otrelax import experiments as ex


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ex.ExperimentConfig("nope")
    with pytest.raises(ValueError):
        ex.ExperimentConfig("ising-table", {"colour": 1})
    with pytest.raises(ValueError):
        ex.ExperimentConfig("gaussian-h-sweep", {"h": []})
    with pytest.raises(ValueError):
        ex.ExperimentConfig("ising-table", workers=0)
    with pytest.raises(FileNotFoundError):
        ex.ExperimentConfig.from_file(str(tmp_path / "missing.json"))
    cfg = ex.ExperimentConfig("gaussian-h-sweep", {"d": 6})
    assert cfg.params["d"] == 6 and cfg.params["h"] == ex.DEFAULTS["gaussian-h-sweep"]["h"]


def test_config_file_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"experiment": "gaussian-exact", "params": {"d": [2], "seeds": [0, 1]}}))
    cfg = ex.ExperimentConfig.from_file(str(path), seeds=[3], tol=None)
    assert cfg.params["seeds"] == [3] and cfg.params["d"] == [2]


def test_every_experiment_has_schema():
    for name in ex.EXPERIMENTS:
        assert name in ex.DEFAULTS and name in ex.COLUMNS and name in ex.RUNNERS


def small_exact():
    return ex.run(ex.ExperimentConfig("gaussian-exact", {"d": [2, 3], "seeds": [0, 1]}))


def test_gaussian_exact_small(tmp_path):
    res = small_exact()
    assert res.passed, res.checks
    assert len(res.rows) == 4
    csv_path, json_path = res.write(str(tmp_path))
    rows = ex.read_csv(open(csv_path).read())
    assert list(rows[0]) == ex.COLUMNS["gaussian-exact"]
    assert rows[1]["value"] == res.rows[1]["value"]
    summary = json.load(open(json_path))
    assert summary["passed"] and summary["n_rows"] == 4


def test_results_reproducible():
    a, b = small_exact(), small_exact()
    strip = [c for c in ex.COLUMNS["gaussian-exact"] if c != "time"]
    for ra, rb in zip(a.rows, b.rows):
        assert [ra[c] for c in strip] == [rb[c] for c in strip]


def test_workers_preserve_order():
    serial = ex.run(ex.ExperimentConfig("gaussian-h-sweep", {"d": 6, "h": [1, 2, 3]}))
    pooled = ex.run(ex.ExperimentConfig("gaussian-h-sweep", {"d": 6, "h": [1, 2, 3]}, workers=2))
    assert [r["h"] for r in pooled.rows] == [1, 2, 3]
    np.testing.assert_array_equal([r["value"] for r in serial.rows], [r["value"] for r in pooled.rows])


def test_h_sweep_small_decays():
    res = ex.run(ex.ExperimentConfig("gaussian-h-sweep", {"d": 8, "h": [1, 2, 3]}))
    err = [r["rel_error"] for r in res.rows]
    assert err[0] > err[1] > err[2] >= -1e-9
    assert res.checks["certificate_sandwich"]


def test_ising_small_sweep():
    res = ex.run(ex.ExperimentConfig("ising-sweep", {"d": [3], "trials": 1}))
    assert res.passed, res.checks
    assert [r["omega"] for r in res.rows] == [1, 2, 3]


def test_ising_table_single_cell():
    res = ex.run(ex.ExperimentConfig("ising-table", {"omega": [1], "rows": [1]}))
    assert res.rows[0]["value"] == pytest.approx(ex.ISING_TABLE_OMEGA1[1], rel=1e-4)


def test_vs_sampling_small():
    res = ex.run(ex.ExperimentConfig("gaussian-vs-sampling", {"d": [2], "n": [20], "seeds": [0]}))
    row = res.rows[0]
    assert row["sinkhorn_samples"] >= row["exact_samples"] - 1e-6
    assert row["relaxation_rel_error"] <= 1e-5


def test_checks_flag_failures():
    rows = [{"seed": 0, "h": h, "rel_error": e, "bures_w2": 1.0, "lower_bound": 1.0 - e, "epsilon": 1.0,
             "certificate": 0.0} for h, e in [(1, 0.1), (2, 0.2)]]
    checks = ex.evaluate_checks("gaussian-h-sweep", rows)
    assert not checks["error_nonincreasing"]
    rows = [{"degree": 4, "pair": 0, "rel_error": 0.2}]
    assert not ex.evaluate_checks("gl-generative", rows)["pair_moments_within_10pct"]
    with pytest.raises(ValueError):
        ex.evaluate_checks("other", [])
