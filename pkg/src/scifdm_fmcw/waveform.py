"""SC-IFDM-FMCW transmitter.

Grid convention: a symbol is an N x M array ``X[k, l]`` (k = DFT block,
l = sample inside the block). The time body is

    s(l + nM) = 1/sqrt(N) * sum_k X[k, l] * exp(j*2*pi*k*(l + nM)/(MN)),

i.e. per-block M-point DFT, interleave, MN-point IDFT. A discrete chirp
occupies exactly one row per column of that grid. Chirp entries are stored
with unit modulus and scaled by sqrt(psi) in the combined grid, so the
time-domain chirp of a frame has power psi/N per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .numerics import (
    bits_per_symbol,
    make_rng,
    qam_modulate,
)

UP = "up"
DOWN = "down"
DIRECTIONS = (UP, DOWN)


@dataclass(frozen=True)
class WaveformParams:
    """Grid, timing and power parameters of one frame."""

    M: int = 32
    N: int = 32
    L_cp: int = 8
    B: float = 200e6
    f_c: float = 77e9
    psi: float = 10.0
    sigma_d2: float = 1.0
    qam_order: int = 4
    S: int = 100
    chirp_schedule: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.chirp_schedule is None:
            object.__setattr__(self, "chirp_schedule", default_schedule(self.S))
        else:
            object.__setattr__(self, "chirp_schedule", tuple(self.chirp_schedule))
        self.validate()

    def validate(self) -> None:
        for name in ("M", "N", "S"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.M % 2:
            raise ValueError("M must be even")
        if self.M % self.N:
            # exact chirp sparsity needs exp(j*pi*M*n^2/N) == exp(j*pi*M*n/N)
            raise ValueError(
                f"(M={self.M}, N={self.N}) unsupported: the chirp is only "
                "M-sparse on the grid when N divides M")
        if not 0 <= self.L_cp < self.MN:
            raise ValueError("need 0 <= L_cp < M*N")
        if self.B <= 0 or self.f_c <= 0:
            raise ValueError("bandwidth and carrier must be positive")
        if self.psi < 0 or self.sigma_d2 < 0:
            raise ValueError("powers must be non-negative")
        bits_per_symbol(self.qam_order)
        if len(self.chirp_schedule) != self.S:
            raise ValueError("chirp_schedule length must equal S")
        bad = set(self.chirp_schedule) - set(DIRECTIONS)
        if bad:
            raise ValueError(f"unknown chirp directions {sorted(bad)}")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def symbol_len(self) -> int:
        return self.MN + self.L_cp

    @property
    def T_c(self) -> float:
        """Chirp period (s)."""
        return self.MN / self.B

    @property
    def eta(self) -> float:
        """Chirp rate (Hz/s)."""
        return self.B / self.T_c

    @property
    def T_sym(self) -> float:
        return self.symbol_len / self.B

    @property
    def psi_ratio_db(self) -> float:
        if self.sigma_d2 == 0:
            return float("inf")
        return float(10 * np.log10(self.psi / self.sigma_d2))

    @property
    def data_per_symbol(self) -> int:
        return self.MN - self.M

    @property
    def bits_per_frame(self) -> int:
        return self.S * self.data_per_symbol * bits_per_symbol(self.qam_order)

    def has_both_directions(self) -> bool:
        return UP in self.chirp_schedule and DOWN in self.chirp_schedule

    def replace(self, **changes) -> "WaveformParams":
        if "S" in changes and "chirp_schedule" not in changes:
            changes["chirp_schedule"] = None
        return replace(self, **changes)


def default_schedule(S: int) -> tuple[str, ...]:
    """First half up-chirps, second half down-chirps."""
    n_up = (S + 1) // 2
    return (UP,) * n_up + (DOWN,) * (S - n_up)


def cp_shift(params: WaveformParams, symbol_index: int) -> int:
    """Chirp time shift (samples, mod MN) applied to symbol ``i``.

    The chirp of symbol i is advanced by i*L_cp so that, once each symbol is
    prefixed by its own tail, the chirp runs without a phase jump across the
    whole frame.
    """
    return (-symbol_index * params.L_cp) % params.MN


# --- SC-IFDM ----------------------------------------------------------------

def _twiddle(params: WaveformParams) -> np.ndarray:
    k = np.arange(params.N)[:, None]
    l = np.arange(params.M)[None, :]
    return np.exp(2j * np.pi * k * l / params.MN)


def scifdm_modulate(grid, params: WaveformParams) -> np.ndarray:
    """N x M grid (or a stack of them) -> MN time samples per grid."""
    grid = np.asarray(grid, dtype=complex)
    if grid.shape[-2:] != (params.N, params.M):
        raise ValueError(f"grid shape {grid.shape} != (..., {params.N}, {params.M})")
    z = grid * _twiddle(params)
    body = np.fft.ifft(z, axis=-2, norm="ortho")  # [..., n, l]
    return body.reshape(grid.shape[:-2] + (params.MN,))


def scifdm_demodulate(signal, params: WaveformParams) -> np.ndarray:
    """Exact inverse of :func:`scifdm_modulate`."""
    signal = np.asarray(signal, dtype=complex)
    if signal.shape[-1] != params.MN:
        raise ValueError(f"expected {params.MN} samples, got {signal.shape[-1]}")
    body = signal.reshape(signal.shape[:-1] + (params.N, params.M))
    z = np.fft.fft(body, axis=-2, norm="ortho")
    return z * np.conj(_twiddle(params))


def ofdm_modulate_baseline(grid, params: WaveformParams) -> np.ndarray:
    """Plain MN-tone OFDM of the row-major flattened grid, with CP (PAPR reference)."""
    grid = np.asarray(grid, dtype=complex)
    if grid.shape[-2:] != (params.N, params.M):
        raise ValueError(f"grid shape {grid.shape} != (..., {params.N}, {params.M})")
    flat = grid.reshape(grid.shape[:-2] + (params.MN,))
    body = np.fft.ifft(flat, axis=-1, norm="ortho")
    return _add_cp(body, params.L_cp)


def ofdm_demodulate_baseline(signal, params: WaveformParams) -> np.ndarray:
    signal = np.asarray(signal, dtype=complex)
    body = signal[..., params.L_cp:]
    if body.shape[-1] != params.MN:
        raise ValueError("wrong OFDM symbol length")
    flat = np.fft.fft(body, axis=-1, norm="ortho")
    return flat.reshape(flat.shape[:-1] + (params.N, params.M))


def _add_cp(body: np.ndarray, L_cp: int) -> np.ndarray:
    if L_cp == 0:
        return body.copy()
    return np.concatenate([body[..., -L_cp:], body], axis=-1)


# --- chirps -------------------------------------------------------------------

def _chirp_phase(idx, MN: int) -> np.ndarray:
    idx = np.mod(np.asarray(idx, dtype=np.int64), MN)
    return np.exp(1j * np.pi * idx.astype(float) ** 2 / MN)


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")


def chirp_time(direction: str, params: WaveformParams, cp_shift: int = 0) -> np.ndarray:
    """Unit-modulus discrete chirp exp(+-j*pi*(p - shift)^2 / MN), p in [0, MN)."""
    _check_direction(direction)
    if cp_shift < 0:
        raise ValueError("cp_shift must be >= 0")
    c = _chirp_phase(np.arange(params.MN) - cp_shift, params.MN)
    return c if direction == UP else np.conj(c)


@dataclass(frozen=True)
class SparseChirpMap:
    """The M non-zero grid entries of one (possibly time-shifted) chirp."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    direction: str
    cp_shift: int
    shape: tuple[int, int]

    @property
    def entries(self) -> list[tuple[int, int, complex]]:
        return [(int(k), int(l), complex(v))
                for k, l, v in zip(self.rows, self.cols, self.values)]

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def densify(self, amplitude: float = 1.0) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=complex)
        grid[self.rows, self.cols] = amplitude * self.values
        return grid


def chirp_rows(direction: str, params: WaveformParams, shift: int) -> np.ndarray:
    """Row index of the chirp in each column for a chirp delayed by ``shift``."""
    l = np.arange(params.M)
    if direction == UP:
        return np.mod(params.M // 2 + l - shift, params.N)
    return np.mod(-params.M // 2 - (l - shift), params.N)


def chirp_dft_sparse(direction: str, params: WaveformParams, symbol_index: int = 0,
                     continuity: bool = True) -> SparseChirpMap:
    """Sparse grid representation of the chirp carried by symbol ``symbol_index``.

    With ``continuity=False`` every symbol carries the unshifted chirp.
    Entry values have unit modulus; ``densify(sqrt(N))`` modulates to
    ``chirp_time`` exactly.
    """
    _check_direction(direction)
    if not 0 <= symbol_index < params.S:
        raise ValueError(f"symbol index {symbol_index} outside [0, {params.S})")
    shift = cp_shift(params, symbol_index) if continuity else 0
    l = np.arange(params.M)
    rows = chirp_rows(direction, params, shift)
    c = _chirp_phase(l - shift, params.MN)
    if direction == DOWN:
        c = np.conj(c)
    values = c * np.exp(-2j * np.pi * rows * l / params.MN)
    return SparseChirpMap(rows=rows, cols=l, values=values, direction=direction,
                          cp_shift=shift, shape=(params.N, params.M))


def assemble_combined(data_grid, chirp: SparseChirpMap, params: WaveformParams) -> np.ndarray:
    """Place sqrt(psi)-scaled chirp entries into the empty slots of a data grid."""
    data_grid = np.asarray(data_grid, dtype=complex)
    if data_grid.shape != (params.N, params.M):
        raise ValueError("data grid has wrong shape")
    if np.any(data_grid[chirp.rows, chirp.cols] != 0):
        raise ValueError("data grid carries non-zero symbols at chirp positions")
    out = data_grid.copy()
    out[chirp.rows, chirp.cols] = np.sqrt(params.psi) * chirp.values
    return out


def data_positions(chirp: SparseChirpMap) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of data slots, column-major order, chirp slots skipped."""
    cols, rows = np.nonzero(~chirp.mask().T)
    return rows, cols


def map_data(symbols, chirp: SparseChirpMap) -> np.ndarray:
    rows, cols = data_positions(chirp)
    symbols = np.asarray(symbols, dtype=complex).reshape(-1)
    if symbols.size != rows.size:
        raise ValueError(f"expected {rows.size} data symbols, got {symbols.size}")
    grid = np.zeros(chirp.shape, dtype=complex)
    grid[rows, cols] = symbols
    return grid


def read_data(grid, chirp: SparseChirpMap) -> np.ndarray:
    rows, cols = data_positions(chirp)
    return np.asarray(grid)[..., rows, cols]


# --- frames ------------------------------------------------------------------

@dataclass
class TimeDomainStream:
    samples: np.ndarray
    sample_rate: float
    symbol_starts: np.ndarray
    L_cp: int = 0
    noise_var: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def body_starts(self) -> np.ndarray:
        return self.symbol_starts + self.L_cp

    def with_samples(self, samples, noise_var: float | None = None,
                     warnings: Sequence[str] = ()) -> "TimeDomainStream":
        return TimeDomainStream(
            samples=np.asarray(samples, dtype=complex),
            sample_rate=self.sample_rate,
            symbol_starts=self.symbol_starts,
            L_cp=self.L_cp,
            noise_var=self.noise_var if noise_var is None else noise_var,
            warnings=list(self.warnings) + list(warnings),
        )


def build_frame(grids, params: WaveformParams) -> TimeDomainStream:
    """Modulate S grids and prefix each symbol with its last L_cp samples."""
    grids = np.asarray(grids, dtype=complex)
    if grids.ndim != 3 or grids.shape[0] != params.S:
        raise ValueError(f"expected {params.S} grids, got array of shape {grids.shape}")
    bodies = scifdm_modulate(grids, params)
    samples = _add_cp(bodies, params.L_cp).reshape(-1)
    starts = np.arange(params.S) * params.symbol_len
    return TimeDomainStream(samples=samples, sample_rate=params.B,
                            symbol_starts=starts, L_cp=params.L_cp)


def split_bodies(stream: TimeDomainStream, params: WaveformParams) -> np.ndarray:
    """Drop the CPs; returns an (S, MN) array of symbol bodies."""
    x = np.asarray(stream.samples).reshape(params.S, params.symbol_len)
    return x[:, params.L_cp:]


@dataclass
class Frame:
    """Everything the transmitter knows about one frame."""

    params: WaveformParams
    stream: TimeDomainStream
    grids: np.ndarray
    chirps: list[SparseChirpMap]
    bits: np.ndarray
    symbols: np.ndarray  # (S, MN - M) data symbols, unit-power constellation * sqrt(sigma_d2)

    def pilot_grids(self) -> np.ndarray:
        return np.stack([c.densify(np.sqrt(self.params.psi)) for c in self.chirps])


def generate_frame(params: WaveformParams, rng=None, continuity: bool = True,
                   bits=None) -> Frame:
    """Random QPSK/QAM data plus the scheduled chirps, CP-inserted."""
    rng = make_rng(rng)
    if bits is None:
        bits = rng.integers(0, 2, size=params.bits_per_frame, dtype=np.int8)
    bits = np.asarray(bits, dtype=np.int8)
    if bits.size != params.bits_per_frame:
        raise ValueError(f"need {params.bits_per_frame} bits, got {bits.size}")
    symbols = (np.sqrt(params.sigma_d2) * qam_modulate(bits, params.qam_order)).reshape(
        params.S, params.data_per_symbol)
    chirps = [chirp_dft_sparse(d, params, i, continuity=continuity)
              for i, d in enumerate(params.chirp_schedule)]
    grids = np.stack([assemble_combined(map_data(symbols[i], chirps[i]), chirps[i], params)
                      for i in range(params.S)])
    return Frame(params=params, stream=build_frame(grids, params), grids=grids,
                 chirps=chirps, bits=bits, symbols=symbols)


def reference_chirp(params: WaveformParams, length: int | None = None) -> np.ndarray:
    """Continuous transmitted chirp (unit modulus) over the frame, per the schedule.

    Sample q of symbol i's window carries chirp index q - L_cp, in the
    direction scheduled for that symbol.
    """
    total = params.S * params.symbol_len if length is None else length
    q = np.arange(total)
    c = _chirp_phase(q - params.L_cp, params.MN)
    sym = np.minimum(q // params.symbol_len, params.S - 1)
    down = np.array([d == DOWN for d in params.chirp_schedule])[sym]
    return np.where(down, np.conj(c), c)


def chirp_power(params: WaveformParams) -> float:
    """Mean time-domain power of the embedded chirp."""
    return params.psi / params.N


def mean_tx_power(params: WaveformParams) -> float:
    return params.sigma_d2 * (params.MN - params.M) / params.MN + chirp_power(params)
