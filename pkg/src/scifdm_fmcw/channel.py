"""Mono-static radar channel, doubly-selective communication channel, AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .numerics import make_rng
from .waveform import TimeDomainStream, WaveformParams, chirp_power


@dataclass(frozen=True)
class RadarTarget:
    gain: complex
    range_m: float
    velocity_mps: float

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError("target range must be positive")

    @property
    def delay_s(self) -> float:
        return 2 * self.range_m / SPEED_OF_LIGHT

    def doppler_hz(self, f_c: float) -> float:
        return 2 * self.velocity_mps * f_c / SPEED_OF_LIGHT

    def delay_samples(self, params: WaveformParams) -> int:
        return int(round(self.delay_s * params.B))


@dataclass(frozen=True)
class CommTap:
    """One path: complex gain, integer delay (samples), integer Doppler (cycles per MN samples)."""

    gain: complex
    delay: int
    doppler: int


def validate_taps(taps: Sequence[CommTap], params: WaveformParams) -> None:
    if not taps:
        raise ValueError("need at least one channel tap")
    for t in taps:
        if not 0 <= t.delay < max(params.L_cp, 1) or (params.L_cp == 0 and t.delay):
            raise ValueError(
                f"tap delay {t.delay} violates CP circularity (L_cp={params.L_cp})")
        if not abs(t.doppler) < params.N / 2:
            raise ValueError(f"tap Doppler {t.doppler} not resolvable (|k| < N/2)")


def awgn(signal, snr_db: float, reference_power: float, seed=None) -> np.ndarray:
    """Add circular complex Gaussian noise of variance reference_power / 10^(snr/10)."""
    signal = np.asarray(signal, dtype=complex)
    if math.isinf(snr_db) and snr_db > 0:
        return signal.copy()
    if reference_power <= 0:
        raise ValueError("reference power must be positive")
    var = noise_variance(snr_db, reference_power)
    rng = make_rng(seed)
    w = rng.standard_normal((2,) + signal.shape)
    return signal + np.sqrt(var / 2) * (w[0] + 1j * w[1])


def noise_variance(snr_db: float, reference_power: float) -> float:
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return reference_power / 10 ** (snr_db / 10)


def apply_radar_channel(stream: TimeDomainStream, targets: Sequence[RadarTarget],
                        params: WaveformParams, snr_r_db: float = math.inf,
                        seed=None) -> TimeDomainStream:
    """Sum of delayed, Doppler-rotated echoes plus noise referenced to the echo chirp power.

    Delays are rounded to whole samples; the Doppler ramp is continuous.
    With no targets the noise level is referenced to a unit-gain echo.
    """
    x = np.asarray(stream.samples)
    n = x.size
    q = np.arange(n)
    y = np.zeros(n, dtype=complex)
    notes = []
    unambiguous = params.MN * SPEED_OF_LIGHT / (2 * params.B)
    for t in targets:
        d = t.delay_samples(params)
        if d >= n:
            raise ValueError(f"target at {t.range_m} m is beyond the frame duration")
        if t.range_m >= unambiguous:
            notes.append(f"target at {t.range_m:.1f} m exceeds the unambiguous "
                         f"range {unambiguous:.1f} m; beat frequency aliases")
        ramp = np.exp(2j * np.pi * t.doppler_hz(params.f_c) * (q[d:] - d) / params.B)
        y[d:] += t.gain * x[: n - d] * ramp
    gain2 = sum(abs(t.gain) ** 2 for t in targets) if targets else 1.0
    ref = gain2 * chirp_power(params)
    var = 0.0
    if ref > 0:
        var = noise_variance(snr_r_db, ref)
        y = awgn(y, snr_r_db, ref, seed)
    return stream.with_samples(y, noise_var=var, warnings=notes)


def apply_comm_channel(stream: TimeDomainStream, taps: Sequence[CommTap],
                       params: WaveformParams, snr_c_db: float = math.inf,
                       seed=None) -> TimeDomainStream:
    """y(q) = sum_r h_r x(q - l_r) exp(j2pi k_r (q - l_r)/MN) + noise.

    q is the absolute sample index in the frame, so the Doppler phase runs
    continuously across symbols. Noise is referenced to the mean received
    signal power.
    """
    validate_taps(taps, params)
    x = np.asarray(stream.samples)
    y = np.zeros_like(x)
    n = x.size
    q = np.arange(n)
    for t in taps:
        d = t.delay
        y[d:] += t.gain * x[: n - d] * np.exp(2j * np.pi * t.doppler * (q[d:] - d) / params.MN)
    var = 0.0
    if not (math.isinf(snr_c_db) and snr_c_db > 0):
        ref = float(np.mean(np.abs(y) ** 2))
        var = noise_variance(snr_c_db, ref)
        y = awgn(y, snr_c_db, ref, seed)
    return stream.with_samples(y, noise_var=var)


# --- grid-domain view of the communication channel -----------------------------

def symbol_tap_gains(taps: Sequence[CommTap], params: WaveformParams,
                     symbol_index: int) -> np.ndarray:
    """Per-symbol tap gains h_r * exp(j2pi k_r t_i / MN), t_i = start of body i."""
    t0 = symbol_index * params.symbol_len + params.L_cp
    return np.array([t.gain * np.exp(2j * np.pi * t.doppler * t0 / params.MN) for t in taps])


def circular_response(body, taps: Sequence[CommTap], gains, params: WaveformParams) -> np.ndarray:
    """Channel acting on one CP-protected body (or a stack of them) with given gains."""
    body = np.asarray(body, dtype=complex)
    p = np.arange(params.MN)
    out = np.zeros_like(body)
    for t, g in zip(taps, gains):
        out += g * np.exp(2j * np.pi * t.doppler * (p - t.delay) / params.MN) * np.roll(
            body, t.delay, axis=-1)
    return out


def grid_response(grid, taps: Sequence[CommTap], params: WaveformParams,
                  gains=None) -> np.ndarray:
    """Closed-form received grid for one symbol (noiseless).

    Y[k0, l] = sum_r g_r * Lam_r * exp(j2pi k_r (l - l_r)/MN)
               * exp(j2pi (k [l-l_r]_M - k0 l)/MN) * X[k, [l - l_r]_M],
    with k = [k0 - k_r]_N and Lam_r = exp(-j2pi k/N) for l < l_r, else 1.
    """
    X = np.asarray(grid, dtype=complex)
    M, N, MN = params.M, params.N, params.MN
    gains = [t.gain for t in taps] if gains is None else gains
    k0 = np.arange(N)[:, None]
    l = np.arange(M)[None, :]
    Y = np.zeros((N, M), dtype=complex)
    for t, g in zip(taps, gains):
        k = np.broadcast_to(np.mod(k0 - t.doppler, N), (N, M))
        lw = np.broadcast_to(np.mod(l - t.delay, M), (N, M))
        lam = np.where(l < t.delay, np.exp(-2j * np.pi * k / N), 1.0)
        phase = np.exp(2j * np.pi * (t.doppler * (l - t.delay) + k * lw - k0 * l) / MN)
        Y += g * lam * phase * X[k, lw]
    return Y
