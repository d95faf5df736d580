import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from rydsqueeze import runner
from rydsqueeze.cli import main
from rydsqueeze.config import PRESETS, ConfigError, load_preset, parse_config

GOLDEN = Path(__file__).parent / "golden"

BASE = {
    "lattice": {"lengths": [5]},
    "potential": {"kind": "sharp-cutoff", "r_b": 2.0},
    "model": {"variant": "XX_RWA"},
    "ensemble": {"n_traj": 300, "dt": 0.02, "t_max": 1.0, "master_seed": 4, "block_size": 50},
}


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_series_header_golden(tmp_path):
    cfg = write_config(tmp_path, BASE)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
    header = (tmp_path / "o" / "timeseries.csv").read_text().splitlines()[0] + "\n"
    assert header == (GOLDEN / "timeseries_header.csv").read_text()


def test_scan_header_golden():
    assert ",".join(runner.SCAN_COLUMNS) + "\n" == (GOLDEN / "scan_header.csv").read_text()


@pytest.mark.parametrize("solver", ["exact", "ising_closed_form"])
def test_single_free_spin_is_unsqueezed(tmp_path, solver):
    data = {**BASE, "solver": solver, "lattice": {"lengths": [1]}, "model": {"variant": "Ising"}}
    cfg = write_config(tmp_path, data)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "timeseries.csv")
    assert all(float(r["xi2"]) == 1.0 for r in rows)


def test_single_free_spin_trajectories(tmp_path):
    # a finite sample has a slightly tilted mean spin, so 1 is met statistically
    data = {**BASE, "lattice": {"lengths": [1]}, "model": {"variant": "Ising"}}
    runner.simulate(parse_config(data), tmp_path)
    rows = read_csv(tmp_path / "timeseries.csv")
    s = runner.resolve(parse_config(data))
    series = runner.execute(s)
    assert np.all(np.abs(series.xi2 - 1.0) <= 3 * series.xi2_err + 1e-12)
    assert len(rows) == len(series)


def test_summary_contents(tmp_path):
    cfg = write_config(tmp_path, BASE)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path), "--seed", "99"])
    s = json.loads((tmp_path / "summary.json").read_text())
    for key in ("version", "master_seed", "config", "xi2_opt", "xi2_opt_db", "t_opt", "collectivity_at_opt",
                "boundary_minimum", "diagnostics"):
        assert key in s
    assert s["master_seed"] == 99 and s["config"]["ensemble"]["master_seed"] == 99
    assert s["version"].startswith("0.1.0")
    assert json.loads((tmp_path / "run_timing.json").read_text())["wall_time_s"] > 0


def test_missing_key_exit_code(tmp_path, capsys):
    data = {k: v for k, v in BASE.items() if k != "model"}
    cfg = write_config(tmp_path, data)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "model" in capsys.readouterr().err


def test_nested_missing_key_path(tmp_path, capsys):
    data = {**BASE, "lattice": {"boundary": "open"}}
    assert main(["simulate", "--config", str(write_config(tmp_path, data)), "--out", str(tmp_path)]) == 2
    assert "lattice.lengths" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    data = {**BASE, "ensemble": {**BASE["ensemble"], "ntraj": 5}}
    assert main(["simulate", "--config", str(write_config(tmp_path, data)), "--out", str(tmp_path)]) == 2
    assert "ensemble.ntraj" in capsys.readouterr().err


def test_yaml_syntax_error_has_line(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("lattice:\n  lengths: [4\nmodel: {variant: XX}\n")
    assert main(["simulate", "--config", str(path)]) == 2
    assert "line" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def broken(run, workers=1, solver=None):
        t = np.array([0.0, 1.0])
        from rydsqueeze.analysis import ObservableSeries

        return ObservableSeries(t, 2, np.full((2, 3), np.nan), np.zeros((2, 3, 3)))

    monkeypatch.setattr(runner, "execute", broken)
    assert main(["simulate", "--config", str(write_config(tmp_path, BASE)), "--out", str(tmp_path)]) == 3


def test_resource_error_exit_code(tmp_path):
    data = {**BASE, "solver": "exact", "lattice": {"lengths": [15]}}
    assert main(["simulate", "--config", str(write_config(tmp_path, data)), "--out", str(tmp_path)]) == 4


def test_unit_mixing_rejected():
    with pytest.raises(ConfigError, match="transverse_field_hz"):
        parse_config({**BASE, "model": {"variant": "LabFrameDriven", "transverse_field_hz": 1e3}})


def test_presets_parse_and_scan_sizes():
    for name in PRESETS:
        load_preset(name)
    figs1 = load_preset("figS1")
    cells = runner.scan_cells(figs1)
    assert len(cells) == 6
    variants = [runner.cell_config(figs1, c).model.variant for c in cells]
    assert variants.count("XX_RWA") == 2 and variants.count("LabFrameDriven") == 4


def test_benchmark_scan_cardinality():
    cfg = parse_config({**BASE, "scan": {"axes": {"L": [8, 10, 12], "r_b": [1, 2, 3]}}})
    assert len(runner.scan_cells(cfg)) == 9


def test_scan_rejects_unknown_axis():
    with pytest.raises(ConfigError, match="unknown scan axes"):
        parse_config({**BASE, "scan": {"axes": {"temperature": [1, 2]}}})


SCAN = {**BASE, "scan": {"axes": {"L": [3, 4], "r_b": [1.0, 2.0], "gamma_over_j0": [0.0, 0.1]}}}


def test_scan_resume_matches_uninterrupted(tmp_path):
    cfg = parse_config(SCAN)
    full = tmp_path / "full"
    runner.scan(cfg, full)
    part = tmp_path / "part"
    assert runner.scan(cfg, part, stop_after=3) == []
    assert not (part / "scan.csv").exists()
    journal = (part / runner.JOURNAL).read_text().splitlines()
    assert len(journal) == 1 + 3
    # simulate a torn final write
    with open(part / runner.JOURNAL, "a") as fh:
        fh.write('{"cell": 3, "key": ')
    calls = []
    original = runner.execute
    runner.execute = lambda *a, **k: calls.append(1) or original(*a, **k)
    try:
        runner.scan(cfg, part, resume=True)
    finally:
        runner.execute = original
    assert len(calls) == 8 - 3
    assert (part / "scan.csv").read_bytes() == (full / "scan.csv").read_bytes()


def test_resume_rejects_other_config(tmp_path):
    runner.scan(parse_config(SCAN), tmp_path, stop_after=1)
    other = parse_config({**SCAN, "ensemble": {**BASE["ensemble"], "master_seed": 5}})
    with pytest.raises(ConfigError, match="different configuration"):
        runner.scan(other, tmp_path, resume=True)


def test_cli_resume_flag(tmp_path):
    cfg = write_config(tmp_path, SCAN)
    runner.scan(parse_config(SCAN), tmp_path / "o", stop_after=2)
    assert main(["scan", "--config", str(cfg), "--out", str(tmp_path / "o"), "--resume"]) == 0
    assert len(read_csv(tmp_path / "o" / "scan.csv")) == 8


def test_scan_cell_failure_is_recorded(tmp_path):
    data = {**BASE, "scan": {"axes": {"variant": ["XX_RWA", "Ising"], "gamma_over_j0": [0.1]}}}
    rows = runner.scan(parse_config(data), tmp_path)
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert "InvalidSpecError" in rows[1]["error"]
    table = read_csv(tmp_path / "scan.csv")
    assert table[1]["status"] == "failed" and table[1]["xi2_opt"] == ""


def test_scan_saves_series(tmp_path):
    data = {**BASE, "scan": {"axes": {"b_over_nj_bar": [2.5, math.inf]}, "save_series": True},
            "ensemble": {**BASE["ensemble"], "max_field_dt": 0.05}}
    rows = runner.scan(parse_config(data), tmp_path)
    assert sorted(p.name for p in (tmp_path / "series").iterdir()) == ["cell_0000.csv", "cell_0001.csv"]
    assert rows[0]["variant"] == "LabFrameDriven" and rows[0]["b_over_nj_bar"] == pytest.approx(2.5)
    assert rows[1]["variant"] == "XX_RWA" and math.isinf(rows[1]["b_over_nj_bar"])
    assert read_csv(tmp_path / "scan.csv")[1]["b_over_nj_bar"] == "inf"


def test_substepping_keeps_recording_grid():
    cfg = parse_config({**BASE, "model": {"variant": "LabFrameDriven", "b_over_nj_bar": 12.5},
                        "ensemble": {**BASE["ensemble"], "max_field_dt": 0.05}})
    run = runner.resolve(cfg)
    k = run.notes["substeps"]
    assert k > 1
    np.testing.assert_allclose(run.ensemble.times, np.arange(0, 1.0001, 0.02), atol=1e-12)


def test_physical_units(tmp_path):
    data = {**BASE, "potential": {"kind": "sharp-cutoff", "r_b": 2.0, "j_plateau_hz": 1000.0},
            "ensemble": {**BASE["ensemble"], "dt": 2e-6, "t_max": 2e-4}}
    cfg = parse_config(data)
    run = runner.resolve(cfg)
    assert run.rate_unit == pytest.approx(2 * math.pi * 1000)
    assert run.ensemble.dt == pytest.approx(2e-6 * 2 * math.pi * 1000)
    summary = runner.simulate(cfg, tmp_path)
    assert summary["time_unit"] == "s" and summary["dt"] == pytest.approx(2e-6)
    times = [float(r["time"]) for r in read_csv(tmp_path / "timeseries.csv")]
    assert times[-1] == pytest.approx(2e-4)


def test_planner_driven_run():
    cfg = parse_config({**{k: v for k, v in BASE.items() if k != "potential"},
                        "planner": {"species": "Sr88_60S3S1", "f": 0.01, "omega_hz": 1e7}})
    run = runner.resolve(cfg)
    assert run.couplings.potential.r_b == pytest.approx(1.9025, abs=1e-4)
    assert run.rate_unit == pytest.approx(2 * math.pi * 1e4)
    # gamma_- = gamma_d = f gamma_r / 2 in units of J0
    expected = 0.01 * 1e6 / 61.3 / 2 / (2 * math.pi * 1e4)
    assert run.dissipation.gamma_minus == pytest.approx(expected)


@pytest.mark.parametrize("variant", ["Ising", "XX_RWA", "OAT", "gOAT"])
def test_two_spin_benchmark(tmp_path, variant):
    data = {**BASE, "lattice": {"lengths": [2]}, "model": {"variant": variant},
            "ensemble": {"n_traj": 4000, "dt": 0.02, "t_max": 3.0, "master_seed": 8, "initial_axis": "x"}}
    report = runner.benchmark(parse_config(data), tmp_path)
    assert report["pass_moments"], report["max_z_score"]
    assert (tmp_path / "benchmark_series.csv").exists()


def test_plan_cli(tmp_path, capsys):
    assert main(["plan", "--species", "Sr88_60S3S1", "--f", "0.01", "--omega-hz", "1e7", "--overlay", "1", "2", "3",
                 "--out", str(tmp_path)]) == 0
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert plan["species"]["lattice_spacing"] == {"value": 1.79, "unit": "um"}
    assert plan["dressing"]["r_b"] == pytest.approx(1.9025, abs=1e-4)
    rows = read_csv(tmp_path / "overlay.csv")
    omega = [float(r["omega_hz"]) for r in rows]
    assert omega == sorted(omega, reverse=True)


def test_plan_projection(tmp_path):
    assert main(["plan", "--species", "Sr88_80S3S1", "--n", "60", "--f", "0.01", "--r-b", "2",
                 "--out", str(tmp_path)]) == 0
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert plan["lifetime_us"] == pytest.approx(61.3, abs=1)


def test_plan_unknown_species(tmp_path, capsys):
    assert main(["plan", "--species", "Sr88_61S", "--f", "0.01", "--r-b", "2", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "Sr88_60S3S1" in err and "Available" in err


def test_list_species(capsys):
    assert main(["plan", "--list-species"]) == 0
    assert "Sr88_60S3S1" in capsys.readouterr().out
