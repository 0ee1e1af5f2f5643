"""Acceptance criteria, one test each; tolerances and runtime budgets are fixed."""

import math
import time

import numpy as np
import pytest
from scipy.constants import c as SPEED_OF_LIGHT

from scifdm_fmcw.channel import CommTap, RadarTarget, apply_comm_channel, apply_radar_channel
from scifdm_fmcw.comm import (
    demap_and_score,
    extract_pilot_observation,
    pilot_transform,
    receive,
    statistic_variance,
)
from scifdm_fmcw.harness.config import ExperimentConfig
from scifdm_fmcw.harness.experiment import read_metrics, run_experiment, run_to_directory
from scifdm_fmcw.numerics import papr_db, qam_modulate
from scifdm_fmcw.radar import dc_energy_fraction, process_frame
from scifdm_fmcw.waveform import (
    DOWN,
    UP,
    WaveformParams,
    build_frame,
    chirp_dft_sparse,
    chirp_time,
    generate_frame,
    ofdm_modulate_baseline,
    reference_chirp,
    scifdm_demodulate,
    scifdm_modulate,
)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_c01_sparsity(record_criterion):
    with Timer() as t:
        p = WaveformParams()
        G = scifdm_demodulate(chirp_time(UP, p), p)
        mag = np.abs(G)
        rows, cols = np.nonzero(mag > 1e-9 * mag.max())
        count = rows.size
        on_congruence = bool(np.all(np.mod(16 + cols - rows, 32) == 0))
        one_per_column = sorted(cols.tolist()) == list(range(32))
    ok = count == 32 and on_congruence and one_per_column and t.elapsed < 1.0
    record_criterion(1, "sparsity", ok,
                     f"{count} entries, congruence {on_congruence}, {t.elapsed:.3f}s (<1s)")
    assert ok


def test_c02_synthesis_equivalence(record_criterion):
    with Timer() as t:
        p = WaveformParams()
        worst = 0.0
        for direction in (UP, DOWN):
            for i in range(100):
                sm = chirp_dft_sparse(direction, p, i)
                s = scifdm_modulate(sm.densify(np.sqrt(p.N)), p)
                worst = max(worst, np.max(np.abs(s - chirp_time(direction, p, sm.cp_shift))))
    ok = worst < 1e-9 and t.elapsed < 5.0
    record_criterion(2, "synthesis equivalence", ok,
                     f"max error {worst:.2e} (<1e-9) over 100 shifts x 2 directions, "
                     f"{t.elapsed:.2f}s (<5s)")
    assert ok


def test_c03_cp_continuity(record_criterion):
    with Timer() as t:
        p = WaveformParams(psi=10.0)
        frac = {}
        for cont in (True, False):
            grids = np.stack([chirp_dft_sparse(d, p, i, cont).densify(np.sqrt(p.psi))
                              for i, d in enumerate(p.chirp_schedule)])
            st = build_frame(grids, p)
            dc = (st.samples * np.conj(reference_chirp(p))).reshape(p.S, p.symbol_len)
            frac[cont] = dc_energy_fraction(dc)
    ok = (frac[True].min() >= 0.99 and frac[False].mean() < frac[True].mean()
          and t.elapsed < 5.0)
    record_criterion(3, "CP continuity", ok,
                     f"min DC fraction {frac[True].min():.6f} (>=0.99), without shift mean "
                     f"{frac[False].mean():.4f}, {t.elapsed:.2f}s (<5s)")
    assert ok


def test_c04_noiseless_loopback(record_criterion):
    with Timer() as t:
        g = np.random.default_rng(404)
        p = WaveformParams(S=4, psi=10.0)
        bad_shift, worst_gain, errors, bits = [], 0.0, 0, 0
        for l in range(8):
            for k in range(-15, 16):
                h = complex((0.3 + 1.2 * g.random()) * np.exp(2j * np.pi * g.random()))
                f = generate_frame(p, g)
                rx = apply_comm_channel(f.stream, [CommTap(h, l, k)], p)
                symbols, est, _ = receive(rx, p, f.chirps)
                if [(a, b) for a, b, _ in est.taps] != [(l, k)]:
                    bad_shift.append((l, k))
                    continue
                worst_gain = max(worst_gain, abs(est.taps[0][2] - h))
                errors += round(demap_and_score(symbols, f.bits, p) * f.bits.size)
                bits += f.bits.size
        # one full-length frame on top
        p100 = WaveformParams(psi=10.0)
        f = generate_frame(p100, g)
        rx = apply_comm_channel(f.stream, [CommTap(0.9 - 0.4j, 7, -15)], p100)
        symbols, est, _ = receive(rx, p100, f.chirps)
        full_ok = [(a, b) for a, b, _ in est.taps] == [(7, -15)]
        errors += round(demap_and_score(symbols, f.bits, p100) * f.bits.size)
        bits += f.bits.size
    ok = (not bad_shift and full_ok and worst_gain < 1e-6 and errors == 0 and bits >= 1e5
          and t.elapsed < 30.0)
    record_criterion(4, "noiseless loopback", ok,
                     f"248 taps, wrong (l,k) {len(bad_shift)}, max |h_hat-h| {worst_gain:.1e} "
                     f"(<1e-6), {errors} errors in {bits} bits, {t.elapsed:.1f}s (<30s)")
    assert ok


def test_c05_variance_formula(record_criterion):
    with Timer() as t:
        g = np.random.default_rng(505)
        taps = [CommTap(0.8, 1, 2), CommTap(0.5j, 4, -3), CommTap(-0.3, 6, 1)]
        chan = sum(abs(x.gain) ** 2 for x in taps)
        own = {(x.doppler - x.delay) % 1024 for x in taps}
        results = []
        for ratio_db, snr_db in ((10.0, 10.0), (20.0, 0.0)):
            p = WaveformParams(S=1, psi=10 ** (ratio_db / 10))
            keep = np.array([s not in own for s in range(p.MN)])
            vals, theory = [], []
            for _ in range(1000):
                f = generate_frame(p, g)
                rx = apply_comm_channel(f.stream, taps, p, snr_db, g)
                Y = scifdm_demodulate(rx.samples[p.L_cp:], p)
                st = pilot_transform(extract_pilot_observation(Y, p, 0), p).reshape(-1)
                vals.append(st[keep])
                theory.append(statistic_variance(p, chan, rx.noise_var))
            emp = float(np.var(np.concatenate(vals)))
            results.append((ratio_db, snr_db, emp, float(np.mean(theory))))
    rel = [abs(e - th) / th for _, _, e, th in results]
    ok = max(rel) <= 0.15 and t.elapsed < 120.0
    detail = ", ".join(f"ratio {r:g} dB / SNR {s:g} dB: {e:.3e} vs {th:.3e}"
                       for r, s, e, th in results)
    record_criterion(5, "variance formula", ok,
                     f"{detail}; max rel. dev {max(rel):.3f} (<=0.15), 1000 trials each, "
                     f"{t.elapsed:.1f}s (<120s)")
    assert ok


def test_c06_radar_accuracy(record_criterion):
    with Timer() as t:
        p = WaveformParams(psi=100.0, sigma_d2=1.0)
        range_tol = SPEED_OF_LIGHT / (2 * p.B)
        vel_tol = SPEED_OF_LIGHT / (2 * p.f_c * p.S * p.T_sym)
        target = RadarTarget(1.0, 30.0, 20.0)
        hits = 0
        for trial in range(200):
            g = np.random.default_rng([606, trial])
            f = generate_frame(p, g)
            tgt = RadarTarget(np.exp(2j * np.pi * g.random()), 30.0, 20.0)
            rx = apply_radar_channel(f.stream, [tgt], p, 10.0, g)
            res, _, _ = process_frame(rx, p)
            if res.targets:
                best = min(res.targets, key=lambda e: abs(e[0] - target.range_m))
                hits += (abs(best[0] - 30.0) <= range_tol and abs(best[1] - 20.0) <= vel_tol)
    rate = hits / 200
    ok = rate >= 0.95 and t.elapsed < 300.0
    record_criterion(6, "radar accuracy", ok,
                     f"{hits}/200 within {range_tol:.3f} m and {vel_tol:.2f} m/s "
                     f"(rate {rate:.3f} >= 0.95), {t.elapsed:.1f}s (<300s)")
    assert ok


@pytest.mark.slow
def test_c07_rmse_trend(record_criterion):
    with Timer() as t:
        cfg = ExperimentConfig(trials=200, comm_enabled=False, radar_snr_db=(-5.0,),
                               psi_ratio_db=(10.0, 15.0, 20.0), fmcw_baseline=True)
        rows = {r["psi_ratio_db"]: r for r in run_experiment(cfg)}
    checks = []
    for key in ("range_rmse_m", "vel_rmse_mps"):
        seq = [rows[r][key] for r in (10.0, 15.0, 20.0)]
        base = rows[math.inf][key]
        checks.append((key, seq, base, seq[0] >= seq[1] >= seq[2],
                       abs(base - seq[2]) <= 0.10 * seq[2]))
    ok = all(c[3] and c[4] for c in checks) and t.elapsed < 600.0
    detail = "; ".join(f"{k} 10/15/20 dB = {s[0]:.4f}/{s[1]:.4f}/{s[2]:.4f}, FMCW {b:.4f}"
                       for k, s, b, _, _ in checks)
    record_criterion(7, "RMSE trend", ok, f"{detail}; 200 trials, {t.elapsed:.0f}s (<600s)")
    assert ok


@pytest.mark.slow
def test_c08_ber_nmse_trends(record_criterion):
    with Timer() as t:
        cfg = ExperimentConfig(trials=100, radar_enabled=False,
                               comm_snr_db=(0.0, 5.0, 10.0, 15.0, 20.0))
        rows = run_experiment(cfg)
    table = {(r["psi_ratio_db"], r["snr_db"]): r for r in rows}
    snrs = cfg.comm_snr_db
    nmse_ok = all(table[(20.0, s)]["nmse_mean"] < table[(15.0, s)]["nmse_mean"]
                  < table[(10.0, s)]["nmse_mean"] for s in snrs)
    hi = snrs[-1]
    ber_hi = (table[(20.0, hi)]["ber_mean"], table[(10.0, hi)]["ber_mean"])
    tradeoff_ok = ber_hi[0] > ber_hi[1]
    mono_ok = True
    for ratio in cfg.psi_ratio_db:
        for a, b in zip(snrs, snrs[1:]):
            ra, rb = table[(ratio, a)], table[(ratio, b)]
            band = 2 * math.hypot(ra["ber_se"], rb["ber_se"])
            mono_ok &= rb["ber_mean"] <= ra["ber_mean"] + band
    ok = nmse_ok and tradeoff_ok and mono_ok and t.elapsed < 900.0
    nm = "/".join(f"{table[(r, hi)]['nmse_mean']:.2e}" for r in (10.0, 15.0, 20.0))
    record_criterion(8, "BER/NMSE trends", ok,
                     f"NMSE ordered at every SNR_c {nmse_ok} (at {hi:g} dB: {nm}); "
                     f"BER at {hi:g} dB ratio 20 vs 10: {ber_hi[0]:.2e} > {ber_hi[1]:.2e} "
                     f"{tradeoff_ok}; BER monotone within 2 SE {mono_ok}; 100 trials, "
                     f"{t.elapsed:.0f}s (<900s)")
    assert ok


def test_c09_papr(record_criterion):
    with Timer() as t:
        g = np.random.default_rng(909)
        p = WaveformParams(S=1)
        sc, ofdm = [], []
        for _ in range(10):  # 10 batches of 1000 frames
            bits = g.integers(0, 2, size=(1000, 2 * p.MN))
            X = qam_modulate(bits.reshape(-1), 4).reshape(1000, p.N, p.M)
            s = scifdm_modulate(X, p)
            s = np.concatenate([s[:, -p.L_cp:], s], axis=1)
            o = ofdm_modulate_baseline(X, p)
            sc += [papr_db(v) for v in s]
            ofdm += [papr_db(v) for v in o]
        med_sc, med_ofdm = float(np.median(sc)), float(np.median(ofdm))
    ok = len(sc) == 10_000 and med_sc < med_ofdm and t.elapsed < 60.0
    record_criterion(9, "PAPR", ok,
                     f"median SC-IFDM {med_sc:.2f} dB < OFDM {med_ofdm:.2f} dB over 1e4 frames, "
                     f"{t.elapsed:.1f}s (<60s)")
    assert ok


def test_c10_reproducibility(record_criterion, tmp_path):
    with Timer() as t:
        cfg = ExperimentConfig(seed=1010, trials=3, symbols=20, psi_ratio_db=(10.0, 20.0),
                               radar_snr_db=(0.0, 10.0), comm_snr_db=(5.0, 15.0))
        a = run_to_directory(cfg, tmp_path / "serial", threads=1, plots=False)
        b = run_to_directory(cfg, tmp_path / "parallel", threads=2, plots=False)
        same = a.read_bytes() == b.read_bytes()
        rows = len(read_metrics(a))
    ok = same and t.elapsed < 120.0
    record_criterion(10, "reproducibility", ok,
                     f"threads 1 vs 2 byte-identical {same} ({rows} rows), "
                     f"{t.elapsed:.1f}s (<120s)")
    assert ok
