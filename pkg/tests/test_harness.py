import math
import subprocess
import sys

import numpy as np
import pytest

from scifdm_fmcw import cli
from scifdm_fmcw.harness import config as cfgmod
from scifdm_fmcw.harness.experiment import (
    aggregate,
    comm_trial,
    draw_targets,
    read_metrics,
    run_experiment,
    run_to_directory,
    scene_map,
    write_metrics,
)
from scifdm_fmcw.harness.plots import emit_plots
from scifdm_fmcw.radar import detect_peaks

TINY = """
[experiment]
schema_version = 1
seed = 5
trials = 2
psi_ratio_db = 10, 20
output_dir = {out}

[waveform]
symbols = 10

[radar]
snr_db = 10
targets = 2

[comm]
snr_db = 10, 20
taps = 2
"""


@pytest.fixture
def tiny(tmp_path):
    return cfgmod.loads(TINY.format(out=tmp_path / "res"))


def test_default_config_round_trip():
    cfg = cfgmod.loads(cfgmod.default_config_text())
    assert cfg == cfgmod.ExperimentConfig()
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg
    odd = cfg.replace(psi_ratio_db=(0.1, 12.5), window="hann", seed=7, comm_snr_db=(math.inf,))
    assert cfgmod.loads(cfgmod.dumps(odd)) == odd


def test_defaults_mirror_scenario():
    cfg = cfgmod.ExperimentConfig()
    p = cfg.waveform()
    assert (p.M, p.N, p.S, p.B, p.f_c) == (32, 32, 100, 200e6, 77e9)
    assert (cfg.range_min_m, cfg.range_max_m) == (10.0, 80.0)
    assert (cfg.velocity_min_mps, cfg.velocity_max_mps) == (-70.0, 70.0)
    assert cfg.psi_ratio_db == (10.0, 15.0, 20.0)
    assert cfg.targets == 3


@pytest.mark.parametrize("text,msg", [
    ("[experiment]\nschema_version = 1\nbogus = 3\n", "unknown key"),
    ("[experiment]\nschema_version = 1\n[extra]\na = 1\n", "unknown section"),
    ("[experiment]\nseed = 1\n", "schema_version"),
    ("[experiment]\nschema_version = 2\n", "schema_version"),
    ("[experiment]\nschema_version = 1\n[comm]\nsnr_db =\n", "empty"),
    ("[experiment]\nschema_version = 1\ntrials = 0\n", "trials"),
    ("[experiment]\nschema_version = 1\n[waveform]\nM = 8\nN = 16\n", "N divides M"),
    ("[experiment]\nschema_version = 1\n[radar]\nenabled = maybe\n", "boolean"),
])
def test_config_errors(text, msg):
    with pytest.raises(cfgmod.ConfigError, match=msg):
        cfgmod.loads(text)


def test_targets_on_grid_and_separated(tiny):
    cfg = tiny.replace(targets=5)
    bin_m = 299792458.0 / (2 * cfg.bandwidth_hz)
    ts = draw_targets(cfg, np.random.default_rng(0))
    bins = sorted(round(t.range_m / bin_m) for t in ts)
    assert all(abs(t.range_m / bin_m - round(t.range_m / bin_m)) < 1e-9 for t in ts)
    assert min(np.diff(bins)) >= cfg.min_separation_bins
    assert all(10 <= t.range_m <= 80 and -70 <= t.velocity_mps <= 70 for t in ts)


def test_noiseless_single_point_ber_zero(tiny):
    cfg = tiny.replace(radar_enabled=False, psi_ratio_db=(10.0,), comm_snr_db=(math.inf,),
                       taps=1, trials=1)
    rows = run_experiment(cfg)
    assert len(rows) == 1
    assert rows[0]["ber_mean"] == 0.0
    assert rows[0]["nmse_mean"] < 1e-12


def test_trial_failures_are_recorded_not_fatal(tiny, monkeypatch):
    from scifdm_fmcw.harness import experiment as ex

    def boom(*_):
        raise ValueError("synthetic failure")

    monkeypatch.setattr(ex, "comm_trial", boom)
    rows = run_experiment(tiny.replace(radar_enabled=False))
    assert all(r["failures"] == tiny.trials and r["trials"] == 0 for r in rows)


def test_rerun_is_byte_identical(tiny, tmp_path):
    a = write_metrics(run_experiment(tiny), tmp_path / "a.csv").read_bytes()
    b = write_metrics(run_experiment(tiny), tmp_path / "b.csv").read_bytes()
    assert a == b
    header = a.decode().splitlines()[0].split(",")
    assert header[:8] == ["snr_db", "psi_ratio_db", "ber_mean", "ber_se", "nmse_mean",
                          "range_rmse_m", "vel_rmse_mps", "trials"]


def test_metrics_csv_round_trip(tiny, tmp_path):
    rows = run_experiment(tiny)
    back = read_metrics(write_metrics(rows, tmp_path / "m.csv"))
    assert len(back) == len(rows)
    for r, s in zip(rows, back):
        for k, v in r.items():
            if isinstance(v, str):
                assert s[k] == v
            elif not (isinstance(v, float) and math.isnan(v)):
                assert s[k] == pytest.approx(v, rel=1e-9)


def test_fmcw_baseline_rows(tiny):
    rows = run_experiment(tiny)
    radar = [r for r in rows if r["sweep"] == "radar"]
    assert sorted(r["psi_ratio_db"] for r in radar) == [10.0, 20.0, math.inf]
    assert all(r["range_rmse_m"] >= 0 for r in radar)


def test_standard_error_shrinks_with_trials(tiny):
    cfg = tiny.replace(radar_enabled=False, psi_ratio_db=(15.0,), comm_snr_db=(5.0,))
    results_small = [comm_trial(cfg, 15.0, 5.0, t) for t in range(4)]
    results_big = [comm_trial(cfg, 15.0, 5.0, t) for t in range(16)]
    se_small = aggregate("comm", 15.0, 5.0, results_small)["ber_se"]
    se_big = aggregate("comm", 15.0, 5.0, results_big)["ber_se"]
    assert se_big < se_small


def test_emit_plots_single_row(tmp_path):
    row = {"snr_db": 5.0, "psi_ratio_db": 10.0, "ber_mean": 0.01, "nmse_mean": 0.02,
           "range_rmse_m": math.nan, "vel_rmse_mps": math.nan, "sweep": "comm"}
    files = emit_plots([row], tmp_path)
    assert {f.name for f in files} == {"ber_vs_snr.png", "nmse_vs_snr.png"}
    assert all(f.stat().st_size > 0 for f in files)
    with pytest.raises(ValueError):
        emit_plots([], tmp_path)


def test_three_ratio_curves(tmp_path):
    import matplotlib.pyplot as plt

    from scifdm_fmcw.harness import plots

    rows = [{"snr_db": s, "psi_ratio_db": r, "ber_mean": 0.1 / (1 + s), "nmse_mean": 0.1,
             "range_rmse_m": math.nan, "vel_rmse_mps": math.nan, "sweep": "comm"}
            for r in (10.0, 15.0, 20.0) for s in (0.0, 10.0)]
    curves = plots._curves(rows, "comm", "ber_mean")
    assert len(curves) == 3
    plots.emit_plots(rows, tmp_path)
    assert (tmp_path / "ber_vs_snr.png").exists()
    assert plt.get_fignums() == []


def test_scene_map_shows_each_target(tiny):
    cfg = tiny.replace(symbols=100, targets=3, scene_snr_db=10.0)
    rd, targets = scene_map(cfg)
    dets = detect_peaks(rd)
    for t in targets:
        assert any(abs(d.range_m - t.range_m) <= 2 * rd.range_bin_m for d in dets)


def test_run_to_directory_outputs(tiny, tmp_path):
    out = tmp_path / "run"
    run_to_directory(tiny, out)
    for name in ("metrics.csv", "rdmap.csv", "ber_vs_snr.png", "rdmap.png",
                 "range_rmse_vs_snr.png"):
        assert (out / name).exists(), name


def test_unwritable_output_dir(tiny, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_to_directory(tiny, blocker / "sub")


def test_cli_validate_default(tmp_path, capsys):
    path = tmp_path / "default.ini"
    path.write_text(cfgmod.default_config_text())
    assert cli.main(["validate", str(path)]) == 0
    assert cli.main(["validate", "--config", str(path)]) == 0


def test_cli_run_empty_snr_list(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nschema_version = 1\n[radar]\nsnr_db =\n")
    assert cli.main(["run", str(path)]) != 0
    assert "snr_db list is empty" in capsys.readouterr().err


def test_cli_missing_config(capsys):
    assert cli.main(["validate", "/nonexistent/x.ini"]) != 0
    assert "cannot read" in capsys.readouterr().err


def test_cli_unknown_subcommand_exit_two():
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--no-such-flag"])
    assert info.value.code == 2


def test_cli_run_and_plot(tiny, tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(cfgmod.dumps(tiny.replace(radar_enabled=False, trials=1)))
    out = tmp_path / "cli"
    assert cli.main(["run", str(path), "--out", str(out), "--seed", "3", "--trials-override",
                     "1", "--no-plots"]) == 0
    assert (out / "metrics.csv").exists()
    assert not (out / "ber_vs_snr.png").exists()
    assert cli.main(["plot", str(out / "metrics.csv")]) == 0
    assert (out / "ber_vs_snr.png").exists()


def test_cli_demo(tmp_path, capsys):
    out = tmp_path / "demo"
    assert cli.main(["demo", "--out", str(out)]) == 0
    assert (out / "rdmap.csv").exists() and (out / "rdmap.png").exists()
    rows = read_metrics(out / "metrics.csv")
    assert sum(r["sweep"] == "comm" for r in rows) == 1
    assert "BER" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "scifdm_fmcw", "--help"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0
    assert "validate" in res.stdout


@pytest.mark.slow
def test_default_sweep_runtime_budget(tmp_path):
    import time

    cfg = cfgmod.loads(cfgmod.default_config_text())
    start = time.perf_counter()
    path = run_to_directory(cfg, tmp_path / "default", plots=False)
    elapsed = time.perf_counter() - start
    rows = read_metrics(path)
    assert len(rows) == 15 + 20
    assert all(r["trials"] == 50 for r in rows)
    assert elapsed < 600.0
