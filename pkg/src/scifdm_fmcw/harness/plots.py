"""PNG figures for a metrics table and a range-Doppler map."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _label(ratio: float) -> str:
    return "pure FMCW" if math.isinf(ratio) else f"psi/sigma_d^2 = {ratio:g} dB"


def _curves(rows, sweep: str, key: str):
    by_ratio: dict[float, list[tuple[float, float]]] = {}
    for r in rows:
        if r["sweep"] != sweep or math.isnan(r[key]):
            continue
        by_ratio.setdefault(r["psi_ratio_db"], []).append((r["snr_db"], r[key]))
    return {k: sorted(v) for k, v in sorted(by_ratio.items())}


def _plot(rows, sweep, key, ylabel, xlabel, path, logy=False) -> Path | None:
    curves = _curves(rows, sweep, key)
    if not curves:
        return None
    fig, ax = plt.subplots(figsize=(5, 4))
    for ratio, pts in curves.items():
        x, y = zip(*pts)
        if logy:
            y = [max(v, 1e-7) for v in y]
        ax.plot(x, y, marker="o", label=_label(ratio))
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_rdmap(velocity, range_m, mags, path, max_range_m: float | None = None) -> Path:
    mags = np.asarray(mags)
    if max_range_m is not None:
        keep = np.asarray(range_m) <= max_range_m
        range_m, mags = np.asarray(range_m)[keep], mags[keep]
    db = 20 * np.log10(mags / mags.max() + 1e-12)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.pcolormesh(velocity, range_m, db, shading="nearest", vmin=-60, vmax=0)
    ax.set_xlabel("velocity (m/s)")
    ax.set_ylabel("range (m)")
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def read_rdmap_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    velocity = np.array([float(v) for v in rows[0][1:]])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return velocity, data[:, 0], data[:, 1:]


def emit_plots(rows, out_dir, rdmap=None, max_range_m: float = 120.0) -> list[Path]:
    """Write BER / NMSE / RMSE curves and the range-Doppler heat map.

    ``rdmap`` is a RangeDopplerMap or None; when None an ``rdmap.csv`` already
    in ``out_dir`` is used if present.
    """
    if not rows:
        raise ValueError("empty metrics table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _plot(rows, "comm", "ber_mean", "BER", "SNR_c (dB)", out / "ber_vs_snr.png", logy=True),
        _plot(rows, "comm", "nmse_mean", "channel NMSE", "SNR_c (dB)", out / "nmse_vs_snr.png",
              logy=True),
        _plot(rows, "radar", "range_rmse_m", "range RMSE (m)", "SNR_r (dB)",
              out / "range_rmse_vs_snr.png", logy=True),
        _plot(rows, "radar", "vel_rmse_mps", "velocity RMSE (m/s)", "SNR_r (dB)",
              out / "velocity_rmse_vs_snr.png", logy=True),
    ]
    if rdmap is not None:
        written.append(plot_rdmap(rdmap.velocity_axis, rdmap.range_axis, rdmap.magnitudes,
                                  out / "rdmap.png", max_range_m))
    elif (out / "rdmap.csv").exists():
        v, r, m = read_rdmap_csv(out / "rdmap.csv")
        written.append(plot_rdmap(v, r, m, out / "rdmap.png", max_range_m))
    return [p for p in written if p is not None]
