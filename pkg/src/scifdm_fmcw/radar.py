"""Mono-static radar receiver: dechirp, range-Doppler map, detection, up/down pairing.

Because the chirp is continuous across CP boundaries, the dechirped stream
of one chirp direction is a plain sum of beat tones. The map therefore
slices that stream on the chirp period (MN samples) rather than on symbol
boundaries: range bins are exactly c/(2B) and the slow-time phase carries
only Doppler.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.ndimage import maximum_filter

from .waveform import DOWN, UP, TimeDomainStream, WaveformParams, reference_chirp


def dechirp(rx: TimeDomainStream, params: WaveformParams) -> np.ndarray:
    """Mix every CP-inclusive symbol window with the conjugate transmitted chirp.

    Returns an (S, MN + L_cp) array. No CP removal takes place.
    """
    x = np.asarray(rx.samples)
    total = params.S * params.symbol_len
    if x.size != total:
        raise ValueError(f"expected {total} samples, got {x.size}")
    return (x * np.conj(reference_chirp(params))).reshape(params.S, params.symbol_len)


def direction_span(params: WaveformParams, direction: str) -> tuple[int, int]:
    """First symbol and count of the contiguous run of ``direction`` symbols."""
    idx = [i for i, d in enumerate(params.chirp_schedule) if d == direction]
    if not idx:
        raise ValueError(f"no {direction}-chirp symbols in the schedule")
    if idx[-1] - idx[0] + 1 != len(idx):
        raise ValueError("radar processing needs the symbols of one direction to be contiguous")
    return idx[0], len(idx)


@dataclass
class RangeDopplerMap:
    """Complex range-Doppler spectrum; rows are range bins, columns Doppler bins (centred)."""

    spectrum: np.ndarray
    direction: str
    range_bin_m: float
    velocity_bin_mps: float
    beat_bin_hz: float
    doppler_bin_hz: float
    degenerate_doppler: bool = False

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.spectrum)

    @property
    def n_range(self) -> int:
        return self.spectrum.shape[0]

    @property
    def n_doppler(self) -> int:
        return self.spectrum.shape[1]

    def doppler_index(self, col):
        """Signed Doppler bin of a column."""
        return np.asarray(col) - self.n_doppler // 2

    @property
    def range_axis(self) -> np.ndarray:
        return np.arange(self.n_range) * self.range_bin_m

    @property
    def velocity_axis(self) -> np.ndarray:
        return self.doppler_index(np.arange(self.n_doppler)) * self.velocity_bin_mps

    def to_csv(self, path, max_range_m: float | None = None) -> None:
        """Write magnitudes with a header row of velocities and a range column."""
        rows = self.n_range
        if max_range_m is not None:
            rows = min(rows, int(np.sum(self.range_axis <= max_range_m)))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["range_m"] + [f"{v:.6g}" for v in self.velocity_axis])
            mags = self.magnitudes
            for r in range(rows):
                w.writerow([f"{self.range_axis[r]:.6g}"] + [f"{m:.6g}" for m in mags[r]])


def range_doppler_map(dechirped, params: WaveformParams, direction: str = UP,
                      window: str | None = None) -> RangeDopplerMap:
    """Fast-time FFT per chirp period, then slow-time FFT across periods.

    The up-chirp beat tone sits at negative frequency, so its fast-time axis
    is flipped; row r of either map corresponds to a beat of r*B/(MN) Hz.
    ``window='hann'`` tapers both axes.
    """
    dechirped = np.asarray(dechirped)
    if dechirped.shape != (params.S, params.symbol_len):
        raise ValueError("dechirped array has the wrong shape")
    first, count = direction_span(params, direction)
    stream = dechirped[first:first + count].reshape(-1)
    MN = params.MN
    n_chunks = stream.size // MN
    if n_chunks < 1:
        raise ValueError("not enough samples for one chirp period")
    chunks = stream[: n_chunks * MN].reshape(n_chunks, MN)
    if window == "hann":
        chunks = chunks * np.hanning(MN)[None, :] * np.hanning(n_chunks)[:, None]
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    fast = np.fft.fft(chunks, axis=1)
    if direction == UP:
        fast = np.roll(fast[:, ::-1], 1, axis=1)  # bin r <- frequency -r
    spec = np.fft.fftshift(np.fft.fft(fast, axis=0), axes=0).T / (MN * n_chunks)
    return RangeDopplerMap(
        spectrum=spec,
        direction=direction,
        range_bin_m=SPEED_OF_LIGHT / (2 * params.B),
        velocity_bin_mps=SPEED_OF_LIGHT / (2 * params.f_c * n_chunks * params.T_c),
        beat_bin_hz=params.B / MN,
        doppler_bin_hz=1 / (n_chunks * params.T_c),
        degenerate_doppler=count < 2 or n_chunks < 2,
    )


@dataclass(frozen=True)
class ThresholdPolicy:
    """Global threshold mean + kappa * std of the map magnitudes."""

    kappa: float = 8.0

    def threshold(self, mags: np.ndarray) -> float:
        return float(mags.mean() + self.kappa * mags.std())


@dataclass(frozen=True)
class Detection:
    beat_bin: float  # refined, range-oriented
    doppler_bin: float  # refined, signed
    magnitude: float
    range_m: float
    velocity_mps: float
    beat_hz: float
    doppler_hz: float


def _refine(prev: complex, peak: complex, nxt: complex, n: int) -> float:
    """Fractional bin offset of a tone from three rectangular-window DFT samples."""
    den = 2 * peak - prev - nxt
    if den == 0 or n < 3:
        return 0.0
    delta = np.real((prev - nxt) / den)
    delta *= np.tan(np.pi / n) / (np.pi / n)
    return float(np.clip(delta, -0.5, 0.5))


def detect_peaks(rd: RangeDopplerMap, policy: ThresholdPolicy | None = None,
                 refine: bool = True) -> list[Detection]:
    """Local maxima above threshold, strongest first, +-1 bin guard on both axes."""
    policy = policy or ThresholdPolicy()
    mags = rd.magnitudes
    if not np.all(np.isfinite(mags)):
        raise ValueError("map contains non-finite values")
    thr = policy.threshold(mags)
    local = mags == maximum_filter(mags, size=3, mode="wrap")
    rows, cols = np.nonzero(local & (mags > thr))
    order = np.argsort(-mags[rows, cols], kind="stable")
    taken = np.zeros_like(local)
    out = []
    nr, nd = mags.shape
    for j in order:
        r, c = int(rows[j]), int(cols[j])
        if taken[r, c]:
            continue
        taken[np.ix_(np.arange(r - 1, r + 2) % nr, np.arange(c - 1, c + 2) % nd)] = True
        dr = dc = 0.0
        if refine:
            s = rd.spectrum
            dr = _refine(s[(r - 1) % nr, c], s[r, c], s[(r + 1) % nr, c], nr)
            dc = _refine(s[r, (c - 1) % nd], s[r, c], s[r, (c + 1) % nd], nd)
        beat = r + dr
        if beat > nr / 2:
            beat -= nr  # negative beat: aliased or Doppler-dominated
        dop = float(rd.doppler_index(c)) + dc
        out.append(Detection(
            beat_bin=beat,
            doppler_bin=dop,
            magnitude=float(mags[r, c]),
            range_m=beat * rd.range_bin_m,
            velocity_mps=dop * rd.velocity_bin_mps,
            beat_hz=beat * rd.beat_bin_hz,
            doppler_hz=dop * rd.doppler_bin_hz,
        ))
    return out


@dataclass
class Resolution:
    targets: list[tuple[float, float]] = field(default_factory=list)
    leftovers: list[Detection] = field(default_factory=list)


def updown_resolve(up: Sequence[Detection], down: Sequence[Detection],
                   params: WaveformParams, gate_bins: float = 2.0,
                   velocity_source: str = "doppler") -> Resolution:
    """Pair up/down detections and convert to (range m, velocity m/s).

    f_bu = f_B - f_D and f_bd = f_B + f_D, so f_B = (f_bu + f_bd)/2 gives range.
    With ``velocity_source='beat'`` the velocity comes from (f_bd - f_bu)/2;
    the default 'doppler' averages the slow-time Doppler of the pair, whose
    resolution is far finer than a beat bin.
    Pairs are formed greedily by nearest beat bin (Doppler bin as tie-break)
    within ``gate_bins``; unpaired detections go to ``leftovers``.
    """
    if velocity_source not in ("doppler", "beat"):
        raise ValueError(f"unknown velocity source {velocity_source!r}")
    cands = []
    for i, u in enumerate(up):
        for j, d in enumerate(down):
            db = abs(u.beat_bin - d.beat_bin)
            dd = abs(u.doppler_bin - d.doppler_bin)
            if db <= gate_bins and (velocity_source == "beat" or dd <= gate_bins):
                cands.append((db + 1e-3 * dd, i, j))
    cands.sort()
    used_u, used_d = set(), set()
    res = Resolution()
    lam = SPEED_OF_LIGHT / params.f_c
    for _, i, j in cands:
        if i in used_u or j in used_d:
            continue
        used_u.add(i)
        used_d.add(j)
        f_bu, f_bd = up[i].beat_hz, down[j].beat_hz
        f_b = 0.5 * (f_bu + f_bd)
        rng_m = f_b * SPEED_OF_LIGHT / (2 * params.eta)
        if velocity_source == "beat":
            f_d = 0.5 * (f_bd - f_bu)
        else:
            f_d = 0.5 * (up[i].doppler_hz + down[j].doppler_hz)
        res.targets.append((rng_m, f_d * lam / 2))
    res.leftovers = [u for i, u in enumerate(up) if i not in used_u]
    res.leftovers += [d for j, d in enumerate(down) if j not in used_d]
    return res


@dataclass(frozen=True)
class MissPenalty:
    """Error charged for a true target with no associated estimate."""

    range_m: float = 5.0
    velocity_mps: float = 5.0


def sensing_errors(estimates: Sequence[tuple[float, float]], truth,
                   gate_m: float = 3.0, penalty: MissPenalty = MissPenalty()):
    """Per-target (range error, velocity error) with greedy nearest-range association."""
    truth = [(t.range_m, t.velocity_mps) if hasattr(t, "range_m") else tuple(t)
             for t in truth]
    if not truth:
        raise ValueError("empty truth set")
    pairs = sorted((abs(e[0] - t[0]), ti, ei)
                   for ti, t in enumerate(truth) for ei, e in enumerate(estimates))
    match = {}
    used = set()
    for dist, ti, ei in pairs:
        if dist > gate_m or ti in match or ei in used:
            continue
        match[ti] = ei
        used.add(ei)
    r_err = np.empty(len(truth))
    v_err = np.empty(len(truth))
    for ti, t in enumerate(truth):
        if ti in match:
            e = estimates[match[ti]]
            r_err[ti] = e[0] - t[0]
            v_err[ti] = e[1] - t[1]
        else:
            r_err[ti] = penalty.range_m
            v_err[ti] = penalty.velocity_mps
    return r_err, v_err, len(match)


def sensing_rmse(estimates, truth, gate_m: float = 3.0,
                 penalty: MissPenalty = MissPenalty()) -> tuple[float, float]:
    r, v, _ = sensing_errors(estimates, truth, gate_m, penalty)
    return float(np.sqrt(np.mean(r ** 2))), float(np.sqrt(np.mean(v ** 2)))


def process_frame(rx: TimeDomainStream, params: WaveformParams,
                  policy: ThresholdPolicy | None = None, window: str | None = None,
                  velocity_source: str = "doppler"):
    """Dechirp, build both maps, detect, pair. Returns (Resolution, maps, detections)."""
    dc = dechirp(rx, params)
    maps = {d: range_doppler_map(dc, params, d, window) for d in (UP, DOWN)
            if d in params.chirp_schedule}
    dets = {d: detect_peaks(m, policy) for d, m in maps.items()}
    if UP in dets and DOWN in dets:
        res = updown_resolve(dets[UP], dets[DOWN], params, velocity_source=velocity_source)
    else:
        only = next(iter(dets.values()))
        res = Resolution(targets=[(d.range_m, d.velocity_mps) for d in only])
    return res, maps, dets


def dc_energy_fraction(dechirped) -> np.ndarray:
    """Per-symbol share of energy in the zero-frequency bin of each window's DFT."""
    spec = np.abs(np.fft.fft(np.asarray(dechirped), axis=-1)) ** 2
    return spec[..., 0] / spec.sum(axis=-1)
