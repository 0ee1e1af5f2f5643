"""INI experiment configuration: versioned schema, unknown keys rejected."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..waveform import WaveformParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    return tuple(float(t) for t in items)


def _fmt_list(vals) -> str:
    return ", ".join(_fmt(v) for v in vals)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_str(text: str):
    t = str(text).strip()
    return None if t.lower() in ("", "none") else t


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    seed: int = 2025
    trials: int = 50
    psi_ratio_db: tuple[float, ...] = (10.0, 15.0, 20.0)
    output_dir: str = "results"
    # [waveform]
    M: int = 32
    N: int = 32
    L_cp: int = 8
    bandwidth_hz: float = 200e6
    carrier_hz: float = 77e9
    sigma_d2: float = 1.0
    qam_order: int = 4
    symbols: int = 100
    # [radar]
    radar_enabled: bool = True
    radar_snr_db: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    targets: int = 3
    range_min_m: float = 10.0
    range_max_m: float = 80.0
    velocity_min_mps: float = -70.0
    velocity_max_mps: float = 70.0
    min_separation_bins: int = 3
    kappa: float = 8.0
    window: str | None = None
    fmcw_baseline: bool = True
    scene_snr_db: float = 10.0
    # [comm]
    comm_enabled: bool = True
    comm_snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    taps: int = 3
    max_doppler: int = 3
    power_decay_db: float = 3.0
    csi: str = "estimated"
    estimator_kappa: float = 4.0
    max_estimated_taps: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.psi_ratio_db:
            raise ConfigError("psi_ratio_db list is empty")
        if self.radar_enabled and not self.radar_snr_db:
            raise ConfigError("radar snr_db list is empty")
        if self.comm_enabled and not self.comm_snr_db:
            raise ConfigError("comm snr_db list is empty")
        if not (self.radar_enabled or self.comm_enabled):
            raise ConfigError("both radar and comm sweeps are disabled")
        if any(math.isinf(r) or math.isnan(r) for r in self.psi_ratio_db):
            raise ConfigError("psi ratios must be finite (use fmcw_baseline for pure FMCW)")
        if self.targets < 1 or self.taps < 1:
            raise ConfigError("need at least one target and one tap")
        if not 0 < self.range_min_m < self.range_max_m:
            raise ConfigError("need 0 < range_min_m < range_max_m")
        if self.velocity_min_mps > self.velocity_max_mps:
            raise ConfigError("velocity_min_mps > velocity_max_mps")
        if self.csi not in ("estimated", "perfect"):
            raise ConfigError("csi must be 'estimated' or 'perfect'")
        if self.window not in (None, "hann"):
            raise ConfigError("window must be none or hann")
        if self.taps > max(self.L_cp, 1) * (2 * self.max_doppler + 1):
            raise ConfigError("more taps than distinct (delay, Doppler) cells")
        try:
            self.waveform()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if 2 * self.max_doppler >= self.N:
            raise ConfigError("max_doppler must be < N/2")

    def waveform(self, psi_ratio_db: float | None = None, data: bool = True) -> WaveformParams:
        ratio = self.psi_ratio_db[0] if psi_ratio_db is None else psi_ratio_db
        return WaveformParams(
            M=self.M, N=self.N, L_cp=self.L_cp, B=self.bandwidth_hz, f_c=self.carrier_hz,
            psi=self.sigma_d2 * 10 ** (ratio / 10),
            sigma_d2=self.sigma_d2 if data else 0.0,
            qam_order=self.qam_order, S=self.symbols)

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


# section -> {ini key: (field name, parser)}
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "experiment": {
        "schema_version": ("", int),
        "seed": ("seed", int),
        "trials": ("trials", int),
        "psi_ratio_db": ("psi_ratio_db", _floats),
        "output_dir": ("output_dir", str),
    },
    "waveform": {
        "M": ("M", int),
        "N": ("N", int),
        "L_cp": ("L_cp", int),
        "bandwidth_hz": ("bandwidth_hz", float),
        "carrier_hz": ("carrier_hz", float),
        "sigma_d2": ("sigma_d2", float),
        "qam_order": ("qam_order", int),
        "symbols": ("symbols", int),
    },
    "radar": {
        "enabled": ("radar_enabled", _bool),
        "snr_db": ("radar_snr_db", _floats),
        "targets": ("targets", int),
        "range_min_m": ("range_min_m", float),
        "range_max_m": ("range_max_m", float),
        "velocity_min_mps": ("velocity_min_mps", float),
        "velocity_max_mps": ("velocity_max_mps", float),
        "min_separation_bins": ("min_separation_bins", int),
        "kappa": ("kappa", float),
        "window": ("window", _opt_str),
        "fmcw_baseline": ("fmcw_baseline", _bool),
        "scene_snr_db": ("scene_snr_db", float),
    },
    "comm": {
        "enabled": ("comm_enabled", _bool),
        "snr_db": ("comm_snr_db", _floats),
        "taps": ("taps", int),
        "max_doppler": ("max_doppler", int),
        "power_decay_db": ("power_decay_db", float),
        "csi": ("csi", str),
        "estimator_kappa": ("estimator_kappa", float),
        "max_estimated_taps": ("max_estimated_taps", int),
    },
}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep M / N / L_cp case
    return cp


def loads(text: str) -> ExperimentConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(cp.sections()) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    version = cp.get("experiment", "schema_version", fallback=None)
    if version is None:
        raise ConfigError("missing [experiment] schema_version")
    if int(version) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    values = {}
    for section in cp.sections():
        spec = SCHEMA[section]
        for key, raw in cp.items(section):
            if key not in spec:
                raise ConfigError(f"unknown key [{section}] {key}")
            name, parse = spec[key]
            if not name:
                continue
            try:
                values[name] = parse(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def dumps(cfg: ExperimentConfig) -> str:
    cp = _parser()
    for section, spec in SCHEMA.items():
        cp.add_section(section)
        for key, (name, _) in spec.items():
            if not name:
                cp.set(section, key, str(SCHEMA_VERSION))
                continue
            val = getattr(cfg, name)
            if isinstance(val, tuple):
                text = _fmt_list(val)
            elif val is None:
                text = "none"
            else:
                text = _fmt(val)
            cp.set(section, key, text)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def default_config_text() -> str:
    from importlib.resources import files

    return files("scifdm_fmcw").joinpath("data/default.ini").read_text()
