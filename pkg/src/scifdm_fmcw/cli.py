"""Command line entry point: run / plot / demo / validate."""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

from .harness import config as cfgmod
from .harness.experiment import read_metrics, run_to_directory


def _config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("config_path", nargs="?", metavar="config", help="INI config file")
    p.add_argument("--config", dest="config_flag", help="INI config file (alternative)")


def _resolve_config(args) -> cfgmod.ExperimentConfig:
    path = args.config_flag or args.config_path
    if path is None:
        raise cfgmod.ConfigError("no config given")
    cfg = cfgmod.load(path)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scifdm-fmcw",
                                     description="SC-IFDM-FMCW joint sensing/communication simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo sweep")
    _config_arg(run)
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--trials-override", type=int)
    run.add_argument("--no-plots", action="store_true")

    plot = sub.add_parser("plot", help="render figures from a metrics.csv")
    plot.add_argument("metrics")
    plot.add_argument("--out", help="figure directory (default: next to metrics)")

    demo = sub.add_parser("demo", help="built-in default scene")
    demo.add_argument("--out", help="output directory (default: a new temp dir)")
    demo.add_argument("--seed", type=int, default=7)
    demo.add_argument("--threads", type=int, default=1)

    val = sub.add_parser("validate", help="check a config file")
    _config_arg(val)
    return parser


def _demo(args) -> int:
    from .harness.experiment import scene_map, run_experiment, write_metrics
    from .harness.plots import emit_plots

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="scifdm_demo_"))
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfgmod.ExperimentConfig(
        seed=args.seed, trials=1, psi_ratio_db=(20.0,), radar_snr_db=(10.0,),
        comm_snr_db=(15.0,), fmcw_baseline=False, output_dir=str(out))
    rd, targets = scene_map(cfg)
    rd.to_csv(out / "rdmap.csv", max_range_m=1.5 * cfg.range_max_m)
    rows = run_experiment(cfg, threads=args.threads)
    write_metrics(rows, out / "metrics.csv")
    emit_plots(rows, out, rdmap=rd)
    for t in targets:
        print(f"target: range {t.range_m:.2f} m, velocity {t.velocity_mps:.2f} m/s")
    for r in rows:
        if r["sweep"] == "comm":
            print(f"BER at SNR_c {r['snr_db']:g} dB, ratio {r['psi_ratio_db']:g} dB: "
                  f"{r['ber_mean']:.3e} (NMSE {r['nmse_mean']:.3e})")
        else:
            print(f"radar RMSE at SNR_r {r['snr_db']:g} dB: range {r['range_rmse_m']:.3f} m, "
                  f"velocity {r['vel_rmse_mps']:.3f} m/s")
    print(f"outputs in {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            cfg = _resolve_config(args)
            print(f"config OK ({len(cfg.psi_ratio_db)} ratios, {cfg.trials} trials per point)")
            return 0
        if args.command == "run":
            cfg = _resolve_config(args)
            if args.trials_override is not None and args.trials_override < 1:
                raise cfgmod.ConfigError("--trials-override must be >= 1")
            path = run_to_directory(cfg, args.out, threads=args.threads,
                                    trials=args.trials_override, plots=not args.no_plots)
            print(f"wrote {path}")
            return 0
        if args.command == "plot":
            from .harness.plots import emit_plots

            rows = read_metrics(args.metrics)
            out = Path(args.out) if args.out else Path(args.metrics).parent
            for p in emit_plots(rows, out):
                print(f"wrote {p}")
            return 0
        if args.command == "demo":
            return _demo(args)
    except (cfgmod.ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")  # pragma: no cover
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
