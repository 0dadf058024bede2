"""
Command-line surface: files written, exit codes and the run archive.
"""

import json
import os

import pytest

from models import Run

DECOUPLED = {"model": {"n_spins": 1, "n_modes": 1, "coupling": [0.0], "tunneling": [1.0]}}


def write_config(tmp_path, document, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def read_json(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def test_spectrum_of_decoupled_model(app, runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, dict(DECOUPLED, spectrum={"k": 3}))
    result = runner.invoke(args=["spectrum", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output

    assert sorted(os.listdir(out)) == [
        "spectrum.csv", "spectrum.csv.meta.json", "spectrum.json", "spectrum.json.meta.json"]
    summary = read_json(out / "spectrum.json")
    assert summary["spectrum"]["eigenvalues"][0] == pytest.approx(0.0, abs=1e-12)
    assert summary["spectrum"]["passes"] == [12]

    lines = (out / "spectrum.csv").read_text().split("\n")
    assert lines[0] == "index,energy,gap_to_ground,cutoff,degenerate"
    assert lines[1].endswith(",12,true")
    assert "\r" not in (out / "spectrum.csv").read_text()

    meta = read_json(out / "spectrum.csv.meta.json")
    assert meta["seed"] == 0
    assert meta["config"]["model"]["coupling"] == [0.0]
    assert meta["execution_log"]

    with app.app_context():
        run = Run.query.one()
        assert run.command == "spectrum"
        assert run.exit_code == 0
        assert len(run.artifacts) == 4
        assert run.config["spectrum"]["k"] == 3


def test_malformed_config_exits_before_writing(app, runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, {"model": {"n_spins": "two"}})
    result = runner.invoke(args=["spectrum", "--config", config, "--out", str(out)])
    assert result.exit_code == 2
    assert not out.exists()
    with app.app_context():
        assert Run.query.count() == 0


def test_dimension_cap_exits_with_sizing_code(app, runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, {"truncation": {"dimension_cap": 10}})
    result = runner.invoke(args=["spectrum", "--config", config, "--out", str(out)])
    assert result.exit_code == 3
    assert not out.exists()
    with app.app_context():
        run = Run.query.one()
        assert run.exit_code == 3
        assert "SizingError" in run.message


def test_regular_set_for_two_spins(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, {
        "model": {"n_spins": 2, "coupling": [1.0, 1.0], "tunneling": [1.0, 1.0]},
        "regular_set": {"samples": 20000, "grid": 5},
    })
    result = runner.invoke(args=["regular-set", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output

    table = (out / "regular_set.csv").read_text()
    assert "+0.707107*sigma_1 -0.707107*sigma_2 = 0" in table
    assert "+0.707107*sigma_1 +0.707107*sigma_2 = 0" in table
    summary = read_json(out / "regular_set.json")
    assert summary["components"] == 4
    assert summary["components_by_arrangement"] == {"vertex": 4, "diagonal": 4}
    grid = (out / "regular_set_grid.csv").read_text()
    assert len(grid.strip().split("\n")) == 1 + 25
    # (-0.5, 0.0) is regular, the centre lies on both diagonals
    assert "\n-0.5,0,true," in grid
    assert "\n0,0,false,\n" in grid


def test_regular_set_reports_both_three_spin_counts(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, {"regular_set": {"n_spins": 3, "samples": 400000}})
    result = runner.invoke(args=["regular-set", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = read_json(out / "regular_set.json")
    assert summary["components"] == 96
    assert summary["components_by_arrangement"] == {"vertex": 96, "diagonal": 24}


def test_repeated_runs_are_byte_identical(runner, tmp_path):
    config = write_config(tmp_path, {"regular_set": {"n_spins": 3, "samples": 30000}})
    for name in ("first", "second"):
        result = runner.invoke(args=["regular-set", "--config", config, "--out",
                                     str(tmp_path / name), "--seed", "9", "--threads", "2"])
        assert result.exit_code == 0, result.output
    for filename in ("regular_set.csv", "regular_set.json"):
        assert (tmp_path / "first" / filename).read_bytes() == \
            (tmp_path / "second" / filename).read_bytes()


def test_json_format_writes_summary_only(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, DECOUPLED)
    result = runner.invoke(args=["spectrum", "--config", config, "--out", str(out),
                                 "--format", "json"])
    assert result.exit_code == 0
    assert sorted(os.listdir(out)) == ["spectrum.json", "spectrum.json.meta.json"]


def test_config_output_section_overrides_flags(runner, tmp_path):
    out = tmp_path / "from_config"
    config = write_config(tmp_path, dict(DECOUPLED, output={"format": "json", "out": str(out),
                                                            "seed": 5}))
    result = runner.invoke(args=["spectrum", "--config", config, "--out", str(tmp_path / "flag"),
                                 "--format", "csv", "--seed", "1"])
    assert result.exit_code == 0
    assert not (tmp_path / "flag").exists()
    assert sorted(os.listdir(out)) == ["spectrum.json", "spectrum.json.meta.json"]
    assert read_json(out / "spectrum.json.meta.json")["seed"] == 5


def test_curve_plot(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, {"curve": {
        "lambdas": [0.0, 1.0], "points": 5, "sigma_min": -0.5, "sigma_max": 0.5}})
    result = runner.invoke(args=["curve", "--config", config, "--out", str(out), "--format", "svg"])
    assert result.exit_code == 0, result.output
    svg = (out / "curve.svg").read_text()
    assert svg.startswith("<?xml")
    assert svg.count('id="series_') == 2
    rows = (out / "curve.csv").read_text().strip().split("\n")
    assert len(rows) == 1 + 10
    summary = read_json(out / "curve.json")
    assert summary["curves"][0]["even_residual"] == pytest.approx(0.0, abs=1e-9)
    assert all(curve["min_second_difference"] >= -1e-9 for curve in summary["curves"])


def test_functional_gap_at_zero_coupling(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, dict(DECOUPLED, functional={
        "targets": [{"sigma": [0.6], "xi": [0.0]}]}))
    result = runner.invoke(args=["functional", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = read_json(out / "functional.json")
    values = [entry["value"] for entry in summary["results"]]
    assert values == pytest.approx([0.2, 0.2], abs=1e-7)
    assert abs(summary["gaps"][0]["fll_minus_fl"]) < 1e-7


def test_adiabatic_at_zero_coupling(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, dict(DECOUPLED, adiabatic={"sigmas": [[0.3]]}))
    result = runner.invoke(args=["adiabatic", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = read_json(out / "adiabatic.json")
    assert summary["targets"][0]["G_value"] == pytest.approx(0.0, abs=1e-12)
    rows = (out / "adiabatic.csv").read_text().strip().split("\n")
    assert len(rows) == 1 + summary["targets"][0]["nodes"]


def test_hk_scan_small_grid(runner, tmp_path):
    out = tmp_path / "out"
    config = write_config(tmp_path, {"hk_scan": {"v_values": [-0.5, 0.5], "j_values": [0.0, 0.5]}})
    result = runner.invoke(args=["hk-scan", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = read_json(out / "hk_scan.json")
    assert summary["collisions"] == 0
    assert summary["points"] == 4


def test_runs_listing(runner, tmp_path):
    config = write_config(tmp_path, DECOUPLED)
    runner.invoke(args=["spectrum", "--config", config, "--out", str(tmp_path / "out")])
    result = runner.invoke(args=["runs"])
    assert result.exit_code == 0
    assert "spectrum" in result.output
    assert "exit=0" in result.output
