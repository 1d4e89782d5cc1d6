import json

import numpy as np
import pytest
import yaml

from mblprobe import cli, units
from mblprobe.config import ConfigError, RunConfig, load_config
from mblprobe.statistics import PeakTable
from mblprobe.table import EnsembleTable

TINY = {
    "model": {"n_sites": 4, "n_max": 2, "disorder": {"start": 1.0, "stop": 5.0, "points": 3}},
    "plan": {"states": [[1, 0, 1, 0], [0, 1, 1, 0]], "realizations": 3,
             "eq_window": {"start": 1.0, "stop": 2.0, "points": 2}},
    "solver": {"method": "dense"},
    "estimate": {"chains": 2, "iterations": 2000, "burn_in": 1000, "thin": 5},
    "calibration": {"n_sites": 3, "times": {"start": 0, "stop": 4, "points": 12}},
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture
def tiny(tmp_path):
    return write_cfg(tmp_path / "tiny.yaml", TINY)


def test_defaults_validate():
    cfg = RunConfig()
    assert cfg.spec().n_sites == 12
    plan = cfg.run_plan()
    assert plan.initial_states.shape == (10, 12)
    assert plan.disorder_grid.size == 13 and plan.realizations == 60


def test_hash_ignores_output_and_jobs(tmp_path):
    a = load_config(write_cfg(tmp_path / "a.yaml", TINY))
    b = load_config(write_cfg(tmp_path / "b.yaml", {
        **TINY, "output": {"directory": "elsewhere"}, "solver": {"method": "dense", "jobs": 4}}))
    c = load_config(write_cfg(tmp_path / "c.yaml", {**TINY, "model": {**TINY["model"], "u": -20}}))
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_mhz_units_convert(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "m.yaml", {
        **TINY, "model": {**TINY["model"], "units": "MHz", "j1": 11.5, "u": -253.0,
                          "disorder": [11.5, 23.0]}}))
    spec = cfg.spec()
    assert spec.j1 == pytest.approx(1.0) and spec.u == pytest.approx(-22.0)
    np.testing.assert_allclose(cfg.model.disorder_grid(), [1.0, 2.0])


@pytest.mark.parametrize("patch", [
    {"model": {"n_sites": 4, "bogus": 1}},
    {"plan": {"states": [[1, 0, 1]]}, "model": {"n_sites": 4}},
    {"model": {"n_sites": 8}},                      # device states need 12 sites
    {"estimate": {"iterations": 100, "burn_in": 100}},
    {"schema_version": 2},
])
def test_bad_config_exits_3(tmp_path, patch):
    path = write_cfg(tmp_path / "bad.yaml", patch)
    with pytest.raises(ConfigError):
        load_config(path)
    assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_unreadable_config(tmp_path):
    (tmp_path / "x.yaml").write_text("a: [1, 2")
    assert cli.main(["sweep", "--config", str(tmp_path / "x.yaml")]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_sweep_is_reproducible_and_analyzable(tmp_path, tiny):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["sweep", "--config", tiny, "--out", str(out1)]) == 0
    assert cli.main(["sweep", "--config", tiny, "--out", str(out2), "--jobs", "2"]) == 0
    assert (out1 / "ensemble.csv").read_bytes() == (out2 / "ensemble.csv").read_bytes()
    table = EnsembleTable.from_csv(out1 / "ensemble.csv")
    assert len(table) == 3 * 2 * 3 * 3                      # quantities x states x R x h
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["config_hash"] == load_config(tiny).config_hash()
    assert manifest["failures"] == []

    assert cli.main(["analyze", "--table", str(out1 / "ensemble.csv"), "--config", tiny,
                     "--out", str(out1)]) == 0
    figures = json.loads((out1 / "figures.json").read_text())
    assert set(figures["mean_curves"]) == {"C", "S", "D"}
    peaks = PeakTable.from_csv(out1 / "peaks.csv")
    assert peaks.values.shape == (3, 2)


def test_seed_override_changes_table(tmp_path, tiny):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["sweep", "--config", tiny, "--out", str(a)])
    cli.main(["sweep", "--config", tiny, "--out", str(b), "--seed", "99"])
    assert (a / "ensemble.csv").read_bytes() != (b / "ensemble.csv").read_bytes()


def test_analyze_refuses_foreign_table(tmp_path, tiny):
    out = tmp_path / "r"
    cli.main(["sweep", "--config", tiny, "--out", str(out)])
    other = write_cfg(tmp_path / "other.yaml", {**TINY, "model": {**TINY["model"], "u": -10}})
    args = ["analyze", "--table", str(out / "ensemble.csv"), "--config", other,
            "--out", str(tmp_path / "a")]
    assert cli.main(args) == cli.EXIT_CONFIG
    assert cli.main(args + ["--ignore-hash"]) == 0


def test_analyze_missing_table(tmp_path):
    assert cli.main(["analyze", "--table", str(tmp_path / "none.csv")]) == cli.EXIT_COMPUTE


def test_estimate_on_constant_peaks(tmp_path, tiny):
    peaks = PeakTable(["C", "S", "D"], [0, 1, 2], np.full((3, 3), 3.0), "abc", 1)
    peaks.to_csv(tmp_path / "peaks.csv")
    code = cli.main(["estimate", "--peaks", str(tmp_path / "peaks.csv"), "--config", tiny,
                     "--out", str(tmp_path), "--allow-unconverged"])
    assert code == 0
    report = json.loads((tmp_path / "estimate.json").read_text())
    assert report["parameters"]["mu"]["mean"] == pytest.approx(3.0, abs=1e-3)
    assert report["config_hash"] == "abc"
    lines = (tmp_path / "posterior_draws.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 200


def test_calibrate_zero_offsets(tmp_path):
    cfg = write_cfg(tmp_path / "cal.yaml", {
        "calibration": {"n_sites": 3, "offsets_mhz": [0, 0, 0],
                        "times": {"start": 0, "stop": 4, "points": 12}}})
    assert cli.main(["calibrate", "--config", cfg, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "calibration.json").read_text())
    assert report["rounds"][0]["max_fit_error_mhz"] == 0.0


def test_calibrate_random_offsets(tmp_path, tiny):
    assert cli.main(["calibrate", "--config", tiny, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "calibration.json").read_text())
    r = report["rounds"][0]
    assert r["max_offset_mhz"] == pytest.approx(15.4)
    assert r["max_fit_error_mhz"] < 0.5


def test_units_command(capsys):
    assert cli.main(["units", "100", "--from", "ns", "--to", "J1t"]) == 0
    assert f"{units.ns_to_j1t(100):.6g}" in capsys.readouterr().out
    assert cli.main(["units", "1", "--from", "ns", "--to", "MHz"]) == cli.EXIT_CONFIG


def test_unit_conversions_invert():
    for x in (0.0, 1.0, 123.4):
        assert units.j1t_to_ns(units.ns_to_j1t(x)) == pytest.approx(x)
        assert units.j1_to_mhz(units.mhz_to_j1(x)) == pytest.approx(x)
