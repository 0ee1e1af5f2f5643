"""Communication receiver: chirp-pilot channel estimation, LMMSE equalization, scoring.

Shift conventions (derived from the forward model and checked by the
loopback tests): a tap (h, l, k) moves an up-chirp pilot by
``s_up = k - l`` and a down-chirp pilot by ``s_down = k + l`` (mod MN).
For the continuous-time channel the statistics are

    up:   Y(s_up)   = h * exp(-j*pi*k^2/MN) * exp(j*2*pi*k*L_cp/MN)
    down: Y(s_down) = h * exp(+j*pi*k^2/MN) * exp(j*2*pi*k*L_cp/MN)

independent of the symbol index, so statistics of equal direction are
averaged over the frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .channel import CommTap, circular_response, symbol_tap_gains
from .numerics import qam_demodulate, qam_modulate
from .waveform import (
    DOWN,
    UP,
    SparseChirpMap,
    WaveformParams,
    _chirp_phase,
    chirp_rows,
    cp_shift,
    map_data,
    read_data,
    scifdm_demodulate,
    scifdm_modulate,
    split_bodies,
)


@dataclass(frozen=True)
class PilotObservation:
    """Twiddled received grid plus the symbol's chirp bookkeeping."""

    grid: np.ndarray  # Z[k, l] = Y[k, l] * exp(j2pi k l / MN)
    offset: int  # chirp advance of this symbol (samples)
    direction: str


@dataclass(frozen=True)
class ShiftHypothesis:
    """One net chirp shift ``alpha*N + beta`` and its statistic."""

    alpha: int
    beta: int
    statistic: complex


def top_hypotheses(stats, params: WaveformParams, count: int = 1) -> list[ShiftHypothesis]:
    flat = np.asarray(stats).reshape(-1)
    order = np.argsort(-np.abs(flat), kind="stable")[:count]
    return [ShiftHypothesis(int(s // params.N), int(s % params.N), complex(flat[s]))
            for s in order]


@dataclass
class ChannelEstimate:
    taps: list[tuple[int, int, complex]]
    detection_threshold: float = 0.0
    unresolved: list[tuple[str, int]] = field(default_factory=list)
    alternatives: list["ChannelEstimate"] = field(default_factory=list)

    def as_comm_taps(self) -> list[CommTap]:
        return [CommTap(h, l, k) for l, k, h in self.taps]

    def as_dict(self) -> dict[tuple[int, int], complex]:
        out: dict[tuple[int, int], complex] = {}
        for l, k, h in self.taps:
            out[(l, k)] = out.get((l, k), 0) + h
        return out


def signed(s, modulus: int):
    """Residue mapped to (-modulus/2, modulus/2]."""
    r = np.mod(s, modulus)
    return np.where(r > modulus // 2, r - modulus, r) if np.ndim(r) else (
        int(r - modulus) if r > modulus // 2 else int(r))


def extract_pilot_observation(grid, params: WaveformParams, symbol_index: int) -> PilotObservation:
    """Attach the symbol's chirp offset to its received grid.

    Nothing is discarded: delay and Doppler are unknown, so the whole grid
    feeds the hypothesis scan.
    """
    Y = np.asarray(grid, dtype=complex)
    k = np.arange(params.N)[:, None]
    l = np.arange(params.M)[None, :]
    Z = Y * np.exp(2j * np.pi * k * l / params.MN)
    # cp_shift is the delay applied to the chirp; the offset is the advance
    offset = (-cp_shift(params, symbol_index)) % params.MN
    return PilotObservation(grid=Z, offset=offset,
                            direction=params.chirp_schedule[symbol_index])


def _raw_transform(Z: np.ndarray, params: WaveformParams, direction: str) -> np.ndarray:
    """T(u) for u in [0, MN), for a chirp with zero offset. Returns flat array."""
    M, N, MN = params.M, params.N, params.MN
    l = np.arange(M)
    beta = np.arange(N)[:, None]
    alpha = np.arange(M)[None, :]
    if direction == UP:
        rows = np.mod(M // 2 + l[None, :] + beta, N)  # (beta, l)
        dechirped = Z[rows, l[None, :]] * np.conj(_chirp_phase(l[None, :] + beta, MN))
        spec = np.fft.fft(dechirped, axis=1) / M  # (beta, alpha)
        phase = np.exp(-1j * np.pi * alpha ** 2 * N / M - 2j * np.pi * beta * alpha / M)
    else:
        rows = np.mod(-(M // 2) - l[None, :] + beta, N)
        dechirped = Z[rows, l[None, :]] * _chirp_phase(l[None, :] - beta, MN)
        spec = np.fft.fft(dechirped, axis=1) / M
        phase = np.exp(1j * np.pi * alpha ** 2 * N / M + 2j * np.pi * beta * alpha / M)
    T = spec * phase  # (beta, alpha), u = alpha*N + beta
    return T.T.reshape(-1)


def pilot_transform(obs: PilotObservation, params: WaveformParams) -> np.ndarray:
    """Hypothesis statistics for every net chirp shift, as an (M, N) array.

    Entry ``[alpha, beta]`` belongs to shift ``s = alpha*N + beta`` and
    estimates the complex gain of a path moving the chirp by ``s``
    (normalised by sqrt(psi)). Mismatched shifts carry only data, noise and
    other paths.
    """
    if params.psi <= 0:
        raise ValueError("pilot transform needs psi > 0")
    T = _raw_transform(obs.grid, params, obs.direction)
    s = np.arange(params.MN)
    u = s + obs.offset if obs.direction == UP else s - obs.offset
    stats = T[np.mod(u, params.MN)] / np.sqrt(params.psi)
    return stats.reshape(params.M, params.N)


def pilot_transform_bruteforce(obs: PilotObservation, params: WaveformParams) -> np.ndarray:
    """Direct per-hypothesis evaluation of :func:`pilot_transform` (test oracle)."""
    M, MN = params.M, params.MN
    l = np.arange(M)
    out = np.empty(MN, dtype=complex)
    for s in range(MN):
        if obs.direction == UP:
            u = l + obs.offset + s
            ref = _chirp_phase(u, MN)
            rows = chirp_rows(UP, params, -(obs.offset + s))
        else:
            u = l + obs.offset - s
            ref = np.conj(_chirp_phase(u, MN))
            rows = chirp_rows(DOWN, params, -(obs.offset - s))
        out[s] = np.mean(obs.grid[rows, l] * np.conj(ref))
    return out.reshape(M, params.N) / np.sqrt(params.psi)


def statistic_variance(params: WaveformParams, channel_power: float, noise_var: float) -> float:
    """Variance of a mismatched-shift statistic of one symbol."""
    return (params.sigma_d2 * channel_power + noise_var) / (params.psi * params.M)


def frame_statistics(grids, params: WaveformParams) -> dict[str, np.ndarray]:
    """Average per-direction hypothesis statistics over all symbols of a frame."""
    acc = {UP: [], DOWN: []}
    for i in range(params.S):
        obs = extract_pilot_observation(grids[i], params, i)
        acc[obs.direction].append(pilot_transform(obs, params))
    return {d: np.mean(v, axis=0) for d, v in acc.items() if v}


def _tap_phase(k: int, params: WaveformParams) -> complex:
    return np.exp(1j * np.pi * k * k / params.MN)


def _feasible_pair(s_up: int, s_down: int, params: WaveformParams):
    MN = params.MN
    tot = s_up + s_down
    diff = s_down - s_up
    if tot % 2:
        return None
    k = signed(tot // 2, MN // 2)
    l = int(np.mod(diff // 2, MN // 2))
    if 0 <= l < max(params.L_cp, 1) and abs(k) < params.N / 2:
        if np.mod(k - l - s_up, MN) == 0 and np.mod(k + l - s_down, MN) == 0:
            return l, k
    return None


def _candidates(U, D, params: WaveformParams, threshold: float):
    up_det = [int(s) for s in np.flatnonzero(np.abs(U) > threshold)]
    down_det = [int(s) for s in np.flatnonzero(np.abs(D) > threshold)]
    cands = {}
    for su in up_det:
        for sd in down_det:
            lk = _feasible_pair(su, sd, params)
            if lk is not None:
                cands[lk] = (su, sd)
    return up_det, down_det, cands


def resolve_shift_ambiguity(up_stats, down_stats, params: WaveformParams,
                            threshold: float, max_taps: int | None = None,
                            consistency: float = 4.0):
    """Pair up-chirp and down-chirp shifts into integer (delay, Doppler) taps.

    Each pair (s_up, s_down) with k = (s_up + s_down)/2, l = (s_down - s_up)/2
    inside the resolvable region is a candidate. A candidate is accepted when
    both directions give the same gain (within ``consistency`` noise std); the
    accepted path is then subtracted from both statistics and the scan
    repeats, which untangles paths that collide in one direction. Paths still
    colliding are picked by greedy pursuit over the remaining candidates,
    refitting all picked gains by least squares after every pick.

    Returns ``(shifts, unresolved)``: list of (l, k) and list of
    (direction, shift) detections that explain nothing.
    """
    MN = params.MN
    U = np.asarray(up_stats).reshape(-1).copy()
    D = np.asarray(down_stats).reshape(-1).copy()
    sigma = threshold / 4.0 if threshold > 0 else 0.0
    up_det, down_det, cands = _candidates(U, D, params, threshold)
    accepted: list[tuple[int, int]] = []
    tol_abs = consistency * np.sqrt(2) * sigma
    while True:
        best = None
        for (l, k), (su, sd) in cands.items():
            if (l, k) in accepted:
                continue
            ph = _tap_phase(k, params)
            gu, gd = U[su] * ph, D[sd] / ph
            g = 0.5 * (gu + gd)
            if abs(g) <= threshold:
                continue
            if abs(gu - gd) <= tol_abs + 1e-6 * max(abs(gu), abs(gd)):
                if best is None or abs(g) > best[0]:
                    best = (abs(g), (l, k), g)
        if best is None:
            break
        _, (l, k), g = best
        su, sd = cands[(l, k)]
        ph = _tap_phase(k, params)
        U[su] -= g / ph
        D[sd] -= g * ph
        accepted.append((l, k))
        if max_taps is not None and len(accepted) >= max_taps:
            break

    # residual collisions: greedy pursuit with a least-squares refit per step.
    # A plain joint fit over every leftover candidate is underdetermined when
    # ghost pairings (up shift of one path, down shift of another) are present.
    limit = math.inf if max_taps is None else max_taps
    rest = [lk for lk in cands if lk not in accepted]
    picked: list[tuple[int, int]] = []
    while rest and len(accepted) + len(picked) < limit:
        RU, RD = U.copy(), D.copy()
        if picked:
            g = _solve_gains(picked, U, D, params)
            for (l, k), gj in zip(picked, g):
                ph = _tap_phase(k, params)
                RU[np.mod(k - l, MN)] -= gj / ph
                RD[np.mod(k + l, MN)] -= gj * ph
        if max(np.max(np.abs(RU)), np.max(np.abs(RD))) <= threshold:
            break
        scores = []
        for l, k in rest:
            ph = _tap_phase(k, params)
            scores.append(abs(RU[np.mod(k - l, MN)] * ph + RD[np.mod(k + l, MN)] / ph))
        j = int(np.argmax(scores))
        if scores[j] / 2 <= threshold:
            break
        picked.append(rest.pop(j))
    if picked:
        g = _solve_gains(picked, U, D, params)
        accepted += [lk for lk, gj in zip(picked, g) if abs(gj) > threshold]

    explained_up = {np.mod(k - l, MN) for l, k in accepted}
    explained_down = {np.mod(k + l, MN) for l, k in accepted}
    unresolved = [(UP, s) for s in up_det if s not in explained_up]
    unresolved += [(DOWN, s) for s in down_det if s not in explained_down]
    return accepted, unresolved


def _solve_gains(shifts, U, D, params: WaveformParams) -> np.ndarray:
    """Least-squares gains g (= h * exp(j2pi k L_cp / MN)) for the given paths."""
    MN = params.MN
    rows_up = sorted({int(np.mod(k - l, MN)) for l, k in shifts})
    rows_down = sorted({int(np.mod(k + l, MN)) for l, k in shifts})
    A = np.zeros((len(rows_up) + len(rows_down), len(shifts)), dtype=complex)
    b = np.concatenate([U[rows_up], D[rows_down]])
    for j, (l, k) in enumerate(shifts):
        ph = _tap_phase(k, params)
        A[rows_up.index(int(np.mod(k - l, MN))), j] = 1 / ph
        A[len(rows_up) + rows_down.index(int(np.mod(k + l, MN))), j] = ph
    g, *_ = np.linalg.lstsq(A, b, rcond=None)
    return g


def estimate_gains(up_stats, down_stats, shifts, params: WaveformParams,
                   threshold: float = 0.0) -> ChannelEstimate:
    """Joint least-squares tap gains at the resolved shifts."""
    if not shifts:
        return ChannelEstimate(taps=[], detection_threshold=threshold)
    U = np.asarray(up_stats).reshape(-1)
    D = np.asarray(down_stats).reshape(-1)
    g = _solve_gains(list(shifts), U, D, params)
    taps = []
    for (l, k), gj in zip(shifts, g):
        h = gj * np.exp(-2j * np.pi * k * params.L_cp / params.MN)
        taps.append((int(l), int(k), complex(h)))
    return ChannelEstimate(taps=taps, detection_threshold=threshold)


def _columns(shifts, params: WaveformParams) -> np.ndarray:
    """Response of each path in the stacked (up, down) statistics, shape (2MN, n)."""
    MN = params.MN
    A = np.zeros((2 * MN, len(shifts)), dtype=complex)
    for j, (l, k) in enumerate(shifts):
        ph = _tap_phase(k, params)
        A[np.mod(k - l, MN), j] = 1 / ph
        A[MN + np.mod(k + l, MN), j] = ph
    return A


def ambiguous_alternatives(shifts, up_stats, down_stats, params: WaveformParams,
                           threshold: float, tol: float = 0.1, limit: int = 8):
    """Tap sets that explain the statistics about as well as ``shifts``.

    Up- and down-chirp shifts only see k - l and k + l, so four paths whose
    shifts form a rectangle are (nearly) linearly dependent: any three of
    them fit. Every candidate whose response lies within ``tol`` (relative)
    of the span of the chosen paths is swapped in for each chosen path it
    leans on.
    """
    if not shifts:
        return []
    U = np.asarray(up_stats).reshape(-1)
    D = np.asarray(down_stats).reshape(-1)
    _, _, cands = _candidates(U, D, params, threshold)
    A = _columns(shifts, params)
    alts = []
    for lk in cands:
        if lk in shifts:
            continue
        col = _columns([lk], params)[:, 0]
        coef, *_ = np.linalg.lstsq(A, col, rcond=None)
        if np.linalg.norm(A @ coef - col) > tol * np.linalg.norm(col):
            continue
        for j in np.flatnonzero(np.abs(coef) > 0.1):
            alt = list(shifts)
            alt[j] = lk
            if sorted(alt) not in [sorted(a) for a in alts]:
                alts.append(alt)
            if len(alts) >= limit:
                return alts
    return alts


def estimate_channel(grids, params: WaveformParams, noise_var: float, channel_power: float = 1.0,
                     kappa: float = 4.0, max_taps: int | None = None) -> ChannelEstimate:
    """Full estimator: per-symbol transforms, frame averaging, shift pairing, gains.

    Near-equivalent tap sets are attached as ``alternatives`` for the
    receiver to arbitrate with the data.
    """
    if not params.has_both_directions():
        raise ValueError("channel estimation needs at least one up- and one down-chirp symbol")
    stats = frame_statistics(grids, params)
    n_min = min(params.chirp_schedule.count(UP), params.chirp_schedule.count(DOWN))
    var = statistic_variance(params, channel_power, noise_var) / n_min
    threshold = kappa * np.sqrt(var)
    shifts, unresolved = resolve_shift_ambiguity(stats[UP], stats[DOWN], params, threshold,
                                                 max_taps=max_taps)
    est = estimate_gains(stats[UP], stats[DOWN], shifts, params, threshold)
    est.unresolved = unresolved
    for alt in ambiguous_alternatives(shifts, stats[UP], stats[DOWN], params, threshold):
        est.alternatives.append(estimate_gains(stats[UP], stats[DOWN], alt, params, threshold))
    return est


def received_channel_power(rx_bodies: np.ndarray, params: WaveformParams,
                           noise_var: float) -> float:
    """Estimate sum |h_r|^2 from received power (mean transmit power is known)."""
    from .waveform import mean_tx_power

    p_rx = float(np.mean(np.abs(rx_bodies) ** 2))
    return max(p_rx - noise_var, 0.0) / mean_tx_power(params)


# --- equalizer ------------------------------------------------------------------

@dataclass
class EqualizerResult:
    symbols: np.ndarray  # (S, MN - M)
    regularized: bool = False
    neg_log_likelihood: float = np.nan  # of the frame under Gaussian data, up to a constant


def _channel_matrix(taps: Sequence[CommTap], params: WaveformParams) -> sp.csr_matrix:
    MN = params.MN
    p = np.arange(MN)
    H = sp.csr_matrix((MN, MN), dtype=complex)
    for t in taps:
        vals = t.gain * np.exp(2j * np.pi * t.doppler * (p - t.delay) / MN)
        H = H + sp.csr_matrix((vals, (p, np.mod(p - t.delay, MN))), shape=(MN, MN))
    return H


def equalize(grids, estimate: ChannelEstimate, params: WaveformParams, noise_var: float,
             chirps: Sequence[SparseChirpMap]) -> EqualizerResult:
    """LMMSE recovery of the data slots of every symbol.

    The known pilot response is removed first; the data are then solved
    from (H^H H + noise_var/sigma_d2 I) x = H^H r in the time domain, H being
    the circular channel operator implied by the estimated taps. The symbol
    dependence of H is a circular time shift, so one factorisation serves
    the whole frame.

    The same factorisation gives the Gaussian likelihood of the pilot-free
    bodies, r ~ CN(0, sigma_d2 H H^H + noise_var I). By Woodbury the
    quadratic form is (|r|^2 - Re<H^H r, x>)/noise_var and the
    log-determinant is log det(A/rho), read off the LU diagonal.
    """
    if not estimate.taps:
        raise ValueError("empty channel estimate")
    Y = np.asarray(grids, dtype=complex)
    taps = estimate.as_comm_taps()
    MN, S = params.MN, params.S
    y = scifdm_modulate(Y, params)  # (S, MN) time bodies
    pilots = np.stack([c.densify(np.sqrt(params.psi)) for c in chirps])
    xp = scifdm_modulate(pilots, params)
    r = np.empty_like(y)
    shifts = np.empty(S, dtype=np.int64)
    for i in range(S):
        g = symbol_tap_gains(taps, params, i)
        resid = y[i] - circular_response(xp[i], taps, g, params)
        t = (i * params.symbol_len + params.L_cp) % MN
        shifts[i] = t
        r[i] = np.roll(resid, t)  # into the frame of the symbol-0-origin operator

    H = _channel_matrix(taps, params)
    Hh = H.conj().T.tocsr()
    rho = noise_var / params.sigma_d2 if params.sigma_d2 > 0 else 0.0
    A = (Hh @ H + rho * sp.identity(MN, dtype=complex, format="csr")).tocsc()
    regularized = False
    try:
        lu = spla.splu(A)
    except RuntimeError:
        floor = 1e-9 * max(abs(A.diagonal()).mean(), 1e-30)
        lu = spla.splu((A + floor * sp.identity(MN, format="csc")).tocsc())
        regularized = True
    b = Hh @ r.T
    x = lu.solve(np.ascontiguousarray(b))  # (MN, S)
    nll = np.nan
    if rho > 0:
        quad = (np.sum(np.abs(r) ** 2) - np.real(np.vdot(b, x))) / noise_var
        logdet = np.sum(np.log(np.abs(lu.U.diagonal()))) - MN * np.log(rho)
        nll = float(quad + S * logdet)
    x = x.T
    for i in range(S):
        x[i] = np.roll(x[i], -shifts[i])
    X = scifdm_demodulate(x, params)
    data = np.stack([read_data(X[i], chirps[i]) for i in range(S)])
    return EqualizerResult(symbols=data, regularized=regularized, neg_log_likelihood=nll)


def demap_and_score(symbol_estimates, tx_bits, params: WaveformParams) -> float:
    """Bit error ratio of hard Gray-QAM decisions."""
    est = np.asarray(symbol_estimates, dtype=complex).reshape(-1)
    if params.sigma_d2 > 0:
        est = est / np.sqrt(params.sigma_d2)
    rx_bits = qam_demodulate(est, params.qam_order)
    tx_bits = np.asarray(tx_bits).reshape(-1)
    if rx_bits.size != tx_bits.size:
        raise ValueError(f"bit count mismatch: {rx_bits.size} vs {tx_bits.size}")
    return float(np.mean(rx_bits != tx_bits))


def channel_nmse(estimate: ChannelEstimate, truth: Sequence[CommTap]) -> float:
    """||h_hat - h||^2 / ||h||^2 over the delay-Doppler tap grid."""
    if not truth:
        raise ValueError("empty true channel")
    true = {}
    for t in truth:
        true[(t.delay, t.doppler)] = true.get((t.delay, t.doppler), 0) + t.gain
    est = estimate.as_dict()
    keys = set(true) | set(est)
    err = sum(abs(est.get(key, 0) - true.get(key, 0)) ** 2 for key in keys)
    return float(err / sum(abs(v) ** 2 for v in true.values()))


def receive(rx, params: WaveformParams, chirps: Sequence[SparseChirpMap],
            csi: str = "estimated", true_taps: Sequence[CommTap] | None = None,
            max_taps: int | None = None, kappa: float = 4.0):
    """Demodulate a received comm stream, estimate the channel, equalize.

    Returns ``(symbol_estimates, ChannelEstimate, EqualizerResult)``.
    """
    Y = scifdm_demodulate(split_bodies(rx, params), params)
    if csi == "perfect":
        if true_taps is None:
            raise ValueError("perfect CSI requires the true taps")
        est = ChannelEstimate(taps=[(t.delay, t.doppler, complex(t.gain)) for t in true_taps])
    elif csi == "estimated":
        bodies = split_bodies(rx, params)
        power = received_channel_power(bodies, params, rx.noise_var)
        est = estimate_channel(Y, params, rx.noise_var, channel_power=power, kappa=kappa,
                               max_taps=max_taps)
    else:
        raise ValueError(f"unknown CSI mode {csi!r}")
    if not est.taps:
        return None, est, None
    eq = equalize(Y, est, params, rx.noise_var, chirps)
    if est.alternatives and params.sigma_d2 > 0 and rx.noise_var > 0:
        for alt in est.alternatives:
            alt_eq = equalize(Y, alt, params, rx.noise_var, chirps)
            if alt_eq.neg_log_likelihood < eq.neg_log_likelihood:
                est, eq = alt, alt_eq
    return eq.symbols, est, eq

