"""Complex-vector primitives shared by the transmitter, channels and receivers."""

from __future__ import annotations

import numpy as np


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=complex)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-D complex vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains NaN or Inf")
    return arr


def unitary_dft(v, inverse: bool = False) -> np.ndarray:
    """DFT (or IDFT) with 1/sqrt(L) scaling in both directions."""
    arr = _as_vector(v)
    if inverse:
        return np.fft.ifft(arr, norm="ortho")
    return np.fft.fft(arr, norm="ortho")


def block_interleave(blocks) -> np.ndarray:
    """Interleave N length-M blocks so block b occupies tones b, b+N, b+2N, ...

    ``blocks`` is an N x M array (or a list of N equal-length sequences);
    ``out[k*N + b] == blocks[b][k]``.
    """
    try:
        arr = np.asarray(blocks, dtype=complex)
    except ValueError as exc:
        raise ValueError("ragged block lengths") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("blocks must form a non-empty N x M array")
    return arr.T.reshape(-1).copy()


def block_deinterleave(v, n_blocks: int) -> np.ndarray:
    """Inverse of :func:`block_interleave`; returns an N x M array."""
    arr = _as_vector(v)
    if n_blocks < 1 or arr.size % n_blocks:
        raise ValueError(f"length {arr.size} not divisible into {n_blocks} blocks")
    return arr.reshape(-1, n_blocks).T.copy()


def papr_db(v) -> float:
    """Peak-to-average power ratio in dB."""
    arr = _as_vector(v)
    power = np.abs(arr) ** 2
    mean = power.mean()
    if mean == 0:
        raise ValueError("PAPR undefined for an all-zero vector")
    return float(10 * np.log10(power.max() / mean))


def make_rng(seed=None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(*keys: int) -> np.random.SeedSequence:
    """Seed sequence for a (base seed, sub-key, ...) tuple, independent of run order."""
    return np.random.SeedSequence([int(k) for k in keys])


# --- Gray-coded square QAM -------------------------------------------------

def _gray_pam_levels(bits_per_axis: int) -> np.ndarray:
    """Amplitude of each Gray label on one axis (index = label)."""
    n = 1 << bits_per_axis
    levels = np.empty(n)
    for idx in range(n):
        levels[idx ^ (idx >> 1)] = 2 * idx - (n - 1)
    return levels


def qam_constellation(order: int) -> np.ndarray:
    """Unit-power Gray-mapped square QAM; entry i is the point for label i.

    Label bits are split MSB-first: the first half drives I, the second Q.
    """
    bps = int(round(np.log2(order)))
    if order < 4 or (1 << bps) != order or bps % 2:
        raise ValueError(f"unsupported QAM order {order}")
    half = bps // 2
    levels = _gray_pam_levels(half)
    labels = np.arange(order)
    i_lab = labels >> half
    q_lab = labels & ((1 << half) - 1)
    # QPSK: label 0 maps to +1+1j so that negation flips every bit
    points = -levels[i_lab] - 1j * levels[q_lab]
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def bits_per_symbol(order: int) -> int:
    return int(round(np.log2(order)))


def qam_modulate(bits, order: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    bps = bits_per_symbol(order)
    if bits.size % bps:
        raise ValueError("bit count must be a multiple of bits per symbol")
    weights = 1 << np.arange(bps - 1, -1, -1)
    labels = bits.reshape(-1, bps) @ weights
    return qam_constellation(order)[labels]


def qam_demodulate(symbols, order: int) -> np.ndarray:
    """Hard nearest-point decisions, returned as a flat bit array."""
    symbols = np.asarray(symbols, dtype=complex).reshape(-1)
    const = qam_constellation(order)
    labels = np.argmin(np.abs(symbols[:, None] - const[None, :]), axis=1)
    bps = bits_per_symbol(order)
    shifts = np.arange(bps - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).reshape(-1).astype(np.int8)
