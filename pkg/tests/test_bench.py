"""Tests for the benchmark harness, plots, and the CLI."""

import csv
import json
import os

import numpy as np
import pytest

from amlmc.bench import (
    ExperimentConfig,
    PRESETS,
    config_from_file,
    fit_loglog,
    load_ground_truth,
    make_ground_truth,
    make_phi,
    preset_config,
    run_experiment,
    truth_path,
)
from amlmc.cli import main as cli_main
from amlmc.plots import emit_plot, read_points_csv


def _tiny_forward_config(out_dir, **over):
    base = dict(problem="forward", model="heston", methods=("std", "amlmc"),
                eps_grid=(0.4, 0.2), level_grid=(1, 2), repetitions=2,
                base_level=1, std_c=0.05, ml_c=2.0, truth_level=4,
                truth_samples=2000, out_dir=str(out_dir), phi_width=50.0)
    base.update(over)
    return ExperimentConfig(**base)


def _tiny_filter_config(out_dir, **over):
    base = dict(problem="filter", model="linear-ou", methods=("pf", "mlpf"),
                eps_grid=(0.4, 0.2), level_grid=(1, 2), repetitions=2,
                n_obs=3, pf_c=0.5, ml_c=1.0, truth_level=4, truth_samples=500,
                truth_reps=2, obs_tau=0.5, phi_width=5.0, data_level=6,
                out_dir=str(out_dir))
    base.update(over)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# fits and payoffs

def test_fit_loglog_recovers_an_exact_line():
    mse = 10.0 ** -np.arange(1, 6)
    cost = 10.0 ** (2.0 - 1.5 * np.log10(mse))
    slope, intercept, r2 = fit_loglog(mse, cost)
    assert slope == pytest.approx(-1.5, abs=1e-12)
    assert intercept == pytest.approx(2.0, abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_make_phi_center_and_saturation():
    phi = make_phi(100.0, 50.0)
    assert phi(np.array([[100.0, 0.0]]))[0] == pytest.approx(100.0)
    # tanh clipping keeps the payoff within center +- width
    assert phi(np.array([[1e9, 0.0]]))[0] == pytest.approx(150.0)
    assert phi(np.array([[-1e9, 0.0]]))[0] == pytest.approx(50.0)
    # unit slope at the center: phi ~ identity for states near it
    assert phi(np.array([[100.5, 0.0]]))[0] == pytest.approx(100.5, abs=1e-3)


# ---------------------------------------------------------------------------
# configuration

def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(problem="inverse")
    with pytest.raises(ValueError):
        ExperimentConfig(problem="forward", methods=("pf",))
    with pytest.raises(ValueError):
        ExperimentConfig(problem="filter", methods=("std",))
    with pytest.raises(ValueError):
        ExperimentConfig(repetitions=1)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=())
    with pytest.raises(ValueError):
        ExperimentConfig(eps_grid=())


def test_config_from_file_roundtrip(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(
        "[experiment]\n"
        "problem = forward\n"
        "model = heston\n"
        "methods = std, amlmc\n"
        "eps_grid = 0.4, 0.2\n"
        "level_grid = 1, 2\n"
        "repetitions = 3\n"
        "base_level = 2\n"
        "std_c = 0.5\n"
        "T = 2.0\n"
        "truth_level = auto\n"
        "[model]\n"
        "v0 = 0.05\n"
        "[truth]\n"
        "samples = 1234\n"
        "reps = 2\n")
    config = config_from_file(path)
    assert config.problem == "forward"
    assert config.methods == ("std", "amlmc")
    assert config.eps_grid == (0.4, 0.2)
    assert config.level_grid == (1, 2)
    assert config.repetitions == 3
    assert config.base_level == 2
    assert config.std_c == 0.5
    assert config.T == 2.0
    assert config.truth_level is None
    assert config.model_overrides == {"v0": 0.05}
    assert config.truth_samples == 1234
    assert config.truth_reps == 2


def test_config_from_file_rejects_unknown_option(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nflux_capacitor = 1\n")
    with pytest.raises(ValueError, match="flux_capacitor"):
        config_from_file(path)


def test_presets_are_valid_and_named():
    for name in ("forward-fhn", "forward-heston", "filter-fhn", "filter-fhn-full"):
        assert name in PRESETS
    assert preset_config("filter-fhn-full").n_obs == 100
    assert preset_config("filter-fhn").n_obs == 20
    over = preset_config("forward-heston", seed=99)
    assert over.seed == 99
    with pytest.raises(ValueError):
        preset_config("nope")


# ---------------------------------------------------------------------------
# ground truth

def test_ground_truth_is_byte_reproducible(tmp_path):
    config = _tiny_forward_config(tmp_path)
    make_ground_truth(config)
    first = open(truth_path(config), "rb").read()
    make_ground_truth(config)
    second = open(truth_path(config), "rb").read()
    assert first == second
    record = json.loads(first)
    assert record["problem"] == "forward"
    assert np.isfinite(record["value"])


def test_missing_ground_truth_error_names_the_cli_step(tmp_path):
    config = _tiny_forward_config(tmp_path / "empty")
    with pytest.raises(FileNotFoundError, match="truth"):
        load_ground_truth(config)


# ---------------------------------------------------------------------------
# experiments

def test_forward_experiment_outputs_and_cost_accounting(tmp_path):
    config = _tiny_forward_config(tmp_path)
    truth = make_ground_truth(config)
    rows, rates = run_experiment(config, truth)
    assert {r["method"] for r in rows} == {"std", "amlmc"}
    for r in rows:
        assert r["mse"] > 0 and r["cost"] > 0
    # std cost at grid point L=1: M = ceil(std_c / Delta^2), cost = M / Delta
    delta = 1.0 / 2 ** (config.base_level + 1)
    M = max(2, int(np.ceil(config.std_c / delta ** 2)))
    std_row = next(r for r in rows if r["method"] == "std" and r["grid"] == "L=1")
    assert std_row["cost"] == pytest.approx(M / delta)
    assert set(rates.slopes) == {"std", "amlmc"}
    # CSV schema
    with open(os.path.join(config.out_dir, "points.csv")) as fh:
        header = next(csv.reader(fh))
    assert header == ["method", "grid", "mse", "cost", "wall_time"]
    with open(os.path.join(config.out_dir, "rates.csv")) as fh:
        header = next(csv.reader(fh))
    assert header == ["method", "slope", "intercept", "r2"]


def test_filter_experiment_runs_and_persists_observations(tmp_path):
    config = _tiny_filter_config(tmp_path)
    truth = make_ground_truth(config)
    assert len(truth["values"]) == config.n_obs
    assert len(truth["observations"]) == config.n_obs
    rows, rates = run_experiment(config, truth)
    assert {r["method"] for r in rows} == {"pf", "mlpf"}
    assert all(np.isfinite(r["mse"]) for r in rows)


# ---------------------------------------------------------------------------
# plots

def _write_points(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "grid", "mse", "cost", "wall_time"])
        writer.writerows(rows)


def test_emit_plot_writes_svg(tmp_path):
    points = tmp_path / "points.csv"
    _write_points(points, [
        ["std", "L=1", "1e-2", "1e3", "0.1"],
        ["std", "L=2", "1e-3", "1e4.5".replace("e4.5", "e4"), "0.1"],
        ["amlmc", "eps=0.1", "1e-3", "5e3", "0.1"],
        ["amlmc", "eps=0.05", "2.5e-4", "1.2e4", "0.1"],
    ])
    out = tmp_path / "points.svg"
    emit_plot(points, out, title="demo")
    text = out.read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text


def test_emit_plot_single_point_series_has_no_fit_line(tmp_path):
    points = tmp_path / "points.csv"
    _write_points(points, [["std", "L=1", "1e-2", "1e3", "0.1"]])
    out = tmp_path / "single.svg"
    emit_plot(points, out)
    assert out.exists()


def test_emit_plot_warns_on_empty_series(tmp_path):
    points = tmp_path / "points.csv"
    _write_points(points, [["std", "L=1", "0", "0", "0.1"],
                           ["ok", "L=1", "1e-2", "1e3", "0.1"],
                           ["ok", "L=2", "1e-3", "1e4", "0.1"]])
    with pytest.warns(UserWarning, match="std"):
        emit_plot(points, tmp_path / "warn.svg")


def test_read_points_csv_error_reporting(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("method,grid\nstd,L=1\n")
    with pytest.raises(ValueError, match="line 1"):
        read_points_csv(bad)
    bad2 = tmp_path / "bad2.csv"
    bad2.write_text("method,grid,mse,cost\nstd,L=1,oops,1e3\n")
    with pytest.raises(ValueError, match="line 2"):
        read_points_csv(bad2)


# ---------------------------------------------------------------------------
# CLI

def test_cli_selftest_passes():
    assert cli_main(["selftest", "--seed", "0"]) == 0


def test_cli_rejects_config_and_preset_together(tmp_path):
    with pytest.raises(SystemExit):
        cli_main(["forward", "--config", "x.ini", "--preset", "forward-heston"])


def test_cli_truth_and_forward_sweep(tmp_path, capsys):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[experiment]\n"
        "problem = forward\n"
        "model = heston\n"
        "methods = std, amlmc\n"
        "eps_grid = 0.4, 0.2\n"
        "level_grid = 1, 2\n"
        "repetitions = 2\n"
        "base_level = 1\n"
        "std_c = 0.05\n"
        "ml_c = 2.0\n"
        "phi_width = 50.0\n"
        "truth_level = 4\n"
        "[truth]\n"
        "samples = 2000\n")
    out = str(tmp_path)
    assert cli_main(["truth", "--config", str(ini), "--out", out]) == 0
    assert cli_main(["forward", "--config", str(ini), "--out", out]) == 0
    captured = capsys.readouterr().out
    assert "rate[std]" in captured and "rate[amlmc]" in captured
    assert os.path.exists(os.path.join(out, "points.csv"))
    assert os.path.exists(os.path.join(out, "forward_heston.svg"))
    # re-render via the plot subcommand
    assert cli_main(["plot", os.path.join(out, "points.csv"),
                     "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "points.svg"))
