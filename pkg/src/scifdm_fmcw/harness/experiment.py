"""Seeded Monte-Carlo sweeps over (SNR, pilot ratio) and metric aggregation."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from ..channel import CommTap, RadarTarget, apply_comm_channel, apply_radar_channel
from ..comm import channel_nmse, demap_and_score, receive
from ..numerics import derive_seed
from ..radar import (
    MissPenalty,
    RangeDopplerMap,
    ThresholdPolicy,
    process_frame,
    sensing_errors,
)
from ..waveform import UP, generate_frame
from .config import ExperimentConfig

log = logging.getLogger(__name__)

COMM, RADAR = "comm", "radar"
_SWEEP_CODE = {COMM: 1, RADAR: 2}

COLUMNS = [
    "snr_db", "psi_ratio_db", "ber_mean", "ber_se", "nmse_mean", "range_rmse_m",
    "vel_rmse_mps", "trials", "sweep", "nmse_se", "range_rmse_se", "vel_rmse_se",
    "detections_mean", "failures",
]


@dataclass
class TrialMetrics:
    seed: int
    ber: float = math.nan
    nmse: float = math.nan
    range_rmse_m: float = math.nan
    vel_rmse_mps: float = math.nan
    detections: int = 0
    range_errors: np.ndarray | None = None
    vel_errors: np.ndarray | None = None


def _streams(cfg: ExperimentConfig, sweep: str, trial: int):
    """Independent generators for (data, channel, noise).

    The seed does not depend on the grid point, so every (SNR, ratio) point
    sees the same data, channel and unit-variance noise draw.
    """
    ss = derive_seed(cfg.seed, _SWEEP_CODE[sweep], trial)
    return [np.random.default_rng(s) for s in ss.spawn(3)], int(ss.generate_state(1)[0])


def draw_taps(cfg: ExperimentConfig, rng: np.random.Generator) -> list[CommTap]:
    """Distinct integer (delay, Doppler) cells with an exponential power profile."""
    cells = [(l, k) for l in range(max(cfg.L_cp, 1))
             for k in range(-cfg.max_doppler, cfg.max_doppler + 1)]
    pick = rng.choice(len(cells), size=cfg.taps, replace=False)
    pick = sorted(pick, key=lambda j: cells[j])
    profile = 10 ** (-cfg.power_decay_db * np.arange(cfg.taps) / 10)
    profile /= profile.sum()
    g = (rng.standard_normal(cfg.taps) + 1j * rng.standard_normal(cfg.taps)) / np.sqrt(2)
    return [CommTap(complex(np.sqrt(p) * gi), *cells[j]) for p, gi, j in zip(profile, g, pick)]


def draw_targets(cfg: ExperimentConfig, rng: np.random.Generator) -> list[RadarTarget]:
    """Targets on the sample-delay grid, at least ``min_separation_bins`` apart in range."""
    bin_m = SPEED_OF_LIGHT / (2 * cfg.bandwidth_hz)
    lo = math.ceil(cfg.range_min_m / bin_m)
    hi = math.floor(cfg.range_max_m / bin_m)
    bins: list[int] = []
    for _ in range(10000):
        if len(bins) == cfg.targets:
            break
        b = int(rng.integers(lo, hi + 1))
        if all(abs(b - o) >= cfg.min_separation_bins for o in bins):
            bins.append(b)
    else:
        raise ValueError("cannot place targets with the requested separation")
    vel = rng.uniform(cfg.velocity_min_mps, cfg.velocity_max_mps, size=cfg.targets)
    phase = rng.uniform(0, 2 * np.pi, size=cfg.targets)
    return [RadarTarget(complex(np.exp(1j * ph)), b * bin_m, float(v))
            for b, v, ph in zip(bins, vel, phase)]


def comm_trial(cfg: ExperimentConfig, ratio_db: float, snr_db: float, trial: int) -> TrialMetrics:
    (r_data, r_chan, r_noise), seed = _streams(cfg, COMM, trial)
    params = cfg.waveform(ratio_db)
    frame = generate_frame(params, r_data)
    taps = draw_taps(cfg, r_chan)
    rx = apply_comm_channel(frame.stream, taps, params, snr_db, r_noise)
    symbols, est, _ = receive(rx, params, frame.chirps, csi=cfg.csi, true_taps=taps,
                              max_taps=cfg.max_estimated_taps, kappa=cfg.estimator_kappa)
    ber = 0.5 if symbols is None else demap_and_score(symbols, frame.bits, params)
    return TrialMetrics(seed=seed, ber=ber, nmse=channel_nmse(est, taps),
                        detections=len(est.taps))


def radar_trial(cfg: ExperimentConfig, ratio_db: float, snr_db: float, trial: int) -> TrialMetrics:
    (r_data, r_chan, r_noise), seed = _streams(cfg, RADAR, trial)
    data = not math.isinf(ratio_db)
    params = cfg.waveform(max(cfg.psi_ratio_db) if not data else ratio_db, data=data)
    frame = generate_frame(params, r_data)
    targets = draw_targets(cfg, r_chan)
    rx = apply_radar_channel(frame.stream, targets, params, snr_db, r_noise)
    res, _, _ = process_frame(rx, params, ThresholdPolicy(cfg.kappa), cfg.window)
    r_err, v_err, n = sensing_errors(res.targets, targets, penalty=MissPenalty())
    return TrialMetrics(seed=seed, range_rmse_m=float(np.sqrt(np.mean(r_err ** 2))),
                        vel_rmse_mps=float(np.sqrt(np.mean(v_err ** 2))), detections=n,
                        range_errors=r_err, vel_errors=v_err)


def _run_task(task):
    sweep, cfg, ratio, snr, trial = task
    fn = comm_trial if sweep == COMM else radar_trial
    try:
        return fn(cfg, ratio, snr, trial)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.warning("%s trial %d at (%.1f dB, %.1f dB) failed: %s", sweep, trial, snr, ratio, exc)
        return None


def grid_points(cfg: ExperimentConfig) -> list[tuple[str, float, float]]:
    pts = []
    if cfg.comm_enabled:
        pts += [(COMM, r, s) for r in cfg.psi_ratio_db for s in cfg.comm_snr_db]
    if cfg.radar_enabled:
        ratios = list(cfg.psi_ratio_db) + ([math.inf] if cfg.fmcw_baseline else [])
        pts += [(RADAR, r, s) for r in ratios for s in cfg.radar_snr_db]
    return pts


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def aggregate(sweep: str, ratio: float, snr: float, results) -> dict:
    ok = [r for r in results if r is not None]
    row = {k: math.nan for k in COLUMNS}
    row.update(snr_db=snr, psi_ratio_db=ratio, sweep=sweep, trials=len(ok),
               failures=len(results) - len(ok))
    if not ok:
        return row
    row["detections_mean"] = float(np.mean([r.detections for r in ok]))
    if sweep == COMM:
        ber = np.array([r.ber for r in ok])
        nmse = np.array([r.nmse for r in ok])
        row.update(ber_mean=float(ber.mean()), ber_se=_se(ber),
                   nmse_mean=float(nmse.mean()), nmse_se=_se(nmse))
    else:
        for key, attr in (("range_rmse_m", "range_errors"), ("vel_rmse_mps", "vel_errors")):
            per_trial = np.array([np.mean(getattr(r, attr) ** 2) for r in ok])
            rmse = float(np.sqrt(per_trial.mean()))
            row[key] = rmse
            se_key = "range_rmse_se" if key == "range_rmse_m" else "vel_rmse_se"
            row[se_key] = _se(per_trial) / (2 * rmse) if rmse > 0 else 0.0
    return row


def run_experiment(cfg: ExperimentConfig, threads: int = 1, trials: int | None = None) -> list[dict]:
    """Run every grid point; rows come back in a fixed order whatever ``threads`` is."""
    n = cfg.trials if trials is None else trials
    points = grid_points(cfg)
    tasks = [(sweep, cfg, ratio, snr, t) for sweep, ratio, snr in points for t in range(n)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        results = [_run_task(t) for t in tasks]
    rows = []
    for j, (sweep, ratio, snr) in enumerate(points):
        rows.append(aggregate(sweep, ratio, snr, results[j * n:(j + 1) * n]))
    return rows


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def write_metrics(rows: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([_cell(row[c]) for c in COLUMNS])
    return path


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k == "sweep":
                    row[k] = v
                elif k in ("trials", "failures"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    if not rows:
        raise ValueError(f"{path} holds no metric rows")
    return rows


def scene_map(cfg: ExperimentConfig, ratio_db: float | None = None,
              snr_db: float | None = None) -> tuple[RangeDopplerMap, list[RadarTarget]]:
    """Up-chirp range-Doppler map of one seeded scene (heat-map figure)."""
    ratio = max(cfg.psi_ratio_db) if ratio_db is None else ratio_db
    snr = cfg.scene_snr_db if snr_db is None else snr_db
    (r_data, r_chan, r_noise), _ = _streams(cfg, RADAR, 10 ** 6)
    params = cfg.waveform(ratio)
    frame = generate_frame(params, r_data)
    targets = draw_targets(cfg, r_chan)
    rx = apply_radar_channel(frame.stream, targets, params, snr, r_noise)
    _, maps, _ = process_frame(rx, params, ThresholdPolicy(cfg.kappa), cfg.window)
    return maps[UP], targets


def prepare_output(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_to_directory(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                     trials: int | None = None, plots: bool = True) -> Path:
    """Run the sweep and write metrics.csv, rdmap.csv and (optionally) PNG figures."""
    out = prepare_output(out_dir or cfg.output_dir)
    rows = run_experiment(cfg, threads=threads, trials=trials)
    write_metrics(rows, out / "metrics.csv")
    rd = None
    if cfg.radar_enabled:
        rd, _ = scene_map(cfg)
        rd.to_csv(out / "rdmap.csv", max_range_m=1.5 * cfg.range_max_m)
    if plots:
        from .plots import emit_plots

        emit_plots(rows, out, rdmap=rd)
    return out / "metrics.csv"
