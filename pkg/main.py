#!/usr/bin/env python3
"""
fedfilter - Federated filtering simulator for IoMT devices and a fog server
Runs the dead-band simulation, sweeps its parameters and writes figure-ready tables
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import config
from simulation.sim_harness import (
    SWEEP_DELTA_COLUMNS,
    SWEEP_DEVICES_COLUMNS,
    SWEEP_TOL_COLUMNS,
    SimConfig,
    horizon_matrix,
    load_source,
    run,
    sweep_delta,
    sweep_devices,
    sweep_tol,
)
from simulation.validation import print_summary, run_suite
from utils.errors import ConfigError, FedFilterError
from utils.report_tools import FORMATS, emit_report, write_matrix

SUBCOMMANDS = ("run", "sweep-delta", "sweep-tol", "sweep-devices", "validate")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

logger = logging.getLogger("fedfilter")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so every parse error maps to exit code 1"""

    def error(self, message):
        raise ConfigError(message)


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    dataset: Optional[str] = None
    columns: tuple = config.DEFAULT_COLUMNS
    n_devices: int = config.DEFAULT_DEVICES
    delta: Optional[float] = None
    tol: Optional[float] = None
    tap_len: int = config.TAP_LEN
    fraction_k: float = config.FRACTION_K
    seed: int = config.DEFAULT_SEED
    out: Optional[str] = None
    fmt: str = "json"
    delta_list: tuple = config.SWEEP_DELTAS
    tol_list: tuple = config.SWEEP_TOLS
    device_list: tuple = config.SWEEP_DEVICE_COUNTS
    samples_per_device: int = config.SYNTHETIC_SAMPLES
    warmup_len: int = config.WARMUP_LEN
    rebalance: bool = True
    dump_matrices: Optional[str] = None

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.delta is not None and self.tol is not None:
            raise ConfigError("--delta and --tol are mutually exclusive")
        if self.fmt not in FORMATS:
            raise ConfigError(f"unknown format {self.fmt!r}, expected one of {FORMATS}")
        if self.out is not None and not Path(self.out).parent.is_dir():
            raise ConfigError(f"output directory does not exist: {Path(self.out).parent}")
        if self.dataset is not None and not Path(self.dataset).is_file():
            raise ConfigError(f"dataset not found: {self.dataset} (omit --dataset for synthetic data)")
        if self.subcommand == "sweep-delta" and len(self.delta_list) < 2:
            raise ConfigError(f"--delta-list needs at least 2 values, got {len(self.delta_list)}")
        if self.subcommand == "sweep-tol" and len(self.tol_list) < 2:
            raise ConfigError(f"--tol-list needs at least 2 values, got {len(self.tol_list)}")
        if self.subcommand == "sweep-devices" and not self.device_list:
            raise ConfigError("--device-list needs at least 1 value")
        return self

    def sim_config(self):
        delta = self.delta
        if delta is None and self.tol is None:
            delta = config.DEFAULT_DELTA
        return SimConfig(
            n_devices=self.n_devices,
            tap_len=self.tap_len,
            delta=delta,
            tol_f=self.tol,
            tol_normalized=self.tol is not None,
            fraction_k=self.fraction_k,
            warmup_len=self.warmup_len,
            monitor_window=min(config.MONITOR_WINDOW, self.warmup_len),
            rebalance=self.rebalance,
            seed=self.seed,
            dataset=self.dataset,
            columns=self.columns,
            samples_per_device=self.samples_per_device,
        )


def _number_list(kind):
    def parse(text):
        try:
            return tuple(kind(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return parse


def resolve_seed(flag_value, environ=os.environ):
    """--seed, then $FEDFILTER_SEED, then the configured default"""
    if flag_value is not None:
        return flag_value
    env_value = environ.get(config.SEED_ENV_VAR)
    if env_value is None or env_value == "":
        return config.DEFAULT_SEED
    try:
        return int(env_value)
    except ValueError:
        raise ConfigError(f"{config.SEED_ENV_VAR} must be an integer, got {env_value!r}") from None


def build_parser():
    parser = _Parser(prog="fedfilter",
                     description="fedfilter - Federated filtering simulator for IoMT devices")
    commands = parser.add_subparsers(dest="subcommand", required=True)

    for name in SUBCOMMANDS:
        sub = commands.add_parser(name)
        sub.add_argument("--seed", type=int, default=None,
                         help=f"Random seed (default ${config.SEED_ENV_VAR} or {config.DEFAULT_SEED})")
        sub.add_argument("--out", type=str, help="Report file to write")
        sub.add_argument("--format", dest="fmt", choices=FORMATS, default="json", help="Report format")
        sub.add_argument("--verbose", action="store_true", help="Debug logging")
        if name == "validate":
            continue

        source = sub.add_mutually_exclusive_group()
        source.add_argument("--dataset", type=str, help="MHEALTH log file (default: synthetic AR(1))")
        source.add_argument("--synthetic", action="store_true", help="Use the seeded AR(1) stream")
        sub.add_argument("--columns", type=_number_list(int), default=config.DEFAULT_COLUMNS,
                         help="1-based dataset columns, comma-separated")
        sub.add_argument("--devices", dest="n_devices", type=int, default=config.DEFAULT_DEVICES,
                         help="Number of devices")
        point = sub.add_mutually_exclusive_group()
        point.add_argument("--delta", type=float, help="Filter parameter delta")
        point.add_argument("--tol", type=float, help="Normalized tolerable perturbation")
        sub.add_argument("--tap-len", type=int, default=config.TAP_LEN, help="LMS taps")
        sub.add_argument("--fraction-k", type=float, default=config.FRACTION_K,
                         help="Fraction of devices averaged per round")
        sub.add_argument("--samples", dest="samples_per_device", type=int,
                         default=config.SYNTHETIC_SAMPLES, help="Synthetic samples per device")
        sub.add_argument("--warmup", dest="warmup_len", type=int, default=config.WARMUP_LEN,
                         help="Warmup samples per device")
        sub.add_argument("--no-rebalance", action="store_true", help="Never adjust delta at runtime")
        if name == "run":
            sub.add_argument("--dump-matrices", type=str, help="Directory for recon/averaged/real CSVs")
        elif name == "sweep-delta":
            sub.add_argument("--delta-list", type=_number_list(float), default=config.SWEEP_DELTAS,
                             help="Comma-separated delta values")
        elif name == "sweep-tol":
            sub.add_argument("--tol-list", type=_number_list(float), default=config.SWEEP_TOLS,
                             help="Comma-separated normalized tolerances")
        elif name == "sweep-devices":
            sub.add_argument("--device-list", type=_number_list(int), default=config.SWEEP_DEVICE_COUNTS,
                             help="Comma-separated device counts")
    return parser


def parse_config(argv, environ=os.environ):
    args = build_parser().parse_args(argv)
    cli = CliConfig(
        subcommand=args.subcommand,
        dataset=None if getattr(args, "synthetic", False) else getattr(args, "dataset", None),
        columns=tuple(getattr(args, "columns", config.DEFAULT_COLUMNS)),
        n_devices=getattr(args, "n_devices", config.DEFAULT_DEVICES),
        delta=getattr(args, "delta", None),
        tol=getattr(args, "tol", None),
        tap_len=getattr(args, "tap_len", config.TAP_LEN),
        fraction_k=getattr(args, "fraction_k", config.FRACTION_K),
        seed=resolve_seed(args.seed, environ),
        out=args.out,
        fmt=args.fmt,
        delta_list=tuple(getattr(args, "delta_list", config.SWEEP_DELTAS)),
        tol_list=tuple(getattr(args, "tol_list", config.SWEEP_TOLS)),
        device_list=tuple(getattr(args, "device_list", config.SWEEP_DEVICE_COUNTS)),
        samples_per_device=getattr(args, "samples_per_device", config.SYNTHETIC_SAMPLES),
        warmup_len=getattr(args, "warmup_len", config.WARMUP_LEN),
        rebalance=not getattr(args, "no_rebalance", False),
        dump_matrices=getattr(args, "dump_matrices", None),
    )
    return cli.validate(), args.verbose


def _run(cli):
    sim = cli.sim_config()
    sim.validate()
    series = load_source(sim)
    metrics, recon, averaged = run(sim, series)

    print(f"📊 Suppression ratio: {metrics.suppression_ratio:.2%}")
    print(f"   Transmissions: {metrics.transmissions_total} of {metrics.samples_total} samples")
    print(f"   delta: {metrics.delta_initial:.4g} -> {metrics.delta_final:.4g} "
          f"({metrics.rebalance_count} rebalances)")
    print(f"   Max suppressed error: {metrics.max_abs_recon_error:.4g}")
    print(f"   Energy efficiency: {metrics.energy_efficiency:.4g}")

    if cli.out:
        emit_report(metrics, cli.out, cli.fmt)
        print(f"💾 Report saved to: {cli.out}")
    if cli.dump_matrices:
        target = Path(cli.dump_matrices)
        target.mkdir(parents=True, exist_ok=True)
        write_matrix(target / "recon.csv", recon)
        write_matrix(target / "averaged.csv", averaged)
        write_matrix(target / "real.csv", horizon_matrix(sim, series))
        print(f"💾 Matrices saved to: {target}")
    return EXIT_OK


def _sweep_delta(cli):
    sim = replace(cli.sim_config(), delta=config.DEFAULT_DELTA, tol_f=None, tol_normalized=False)
    rows = sweep_delta(sim, cli.delta_list)
    for row in rows:
        print(f"   delta {row['delta']:<8.4g} suppression {row['suppression_ratio']:.2%}")
    if cli.out:
        emit_report(rows, cli.out, cli.fmt, SWEEP_DELTA_COLUMNS)
        print(f"💾 Table saved to: {cli.out}")
    return EXIT_OK


def _sweep_tol(cli):
    rows = sweep_tol(cli.sim_config(), cli.tol_list)
    for row in rows:
        print(f"   tol {row['tol_normalized']:<8.4g} delta {row['delta']:.4g} "
              f"suppression {row['suppression_ratio']:.2%}")
    if cli.out:
        emit_report(rows, cli.out, cli.fmt, SWEEP_TOL_COLUMNS)
        print(f"💾 Table saved to: {cli.out}")
    return EXIT_OK


def _sweep_devices(cli):
    rows = sweep_devices(cli.sim_config(), cli.device_list)
    for row in rows:
        print(f"   {row['n_devices']:>4} devices  energy efficiency {row['energy_efficiency']:.4g}")
    if cli.out:
        emit_report(rows, cli.out, cli.fmt, SWEEP_DEVICES_COLUMNS)
        print(f"💾 Table saved to: {cli.out}")
    return EXIT_OK


def _validate(cli):
    results = run_suite(cli.seed)
    ok = print_summary(results)
    if cli.out:
        rows = [{"check": r.name, "passed": r.passed, "trials": r.trials, "detail": r.detail}
                for r in results]
        emit_report(rows, cli.out, cli.fmt, ("check", "passed", "trials", "detail"))
    return EXIT_OK if ok else EXIT_RUNTIME


HANDLERS = {
    "run": _run,
    "sweep-delta": _sweep_delta,
    "sweep-tol": _sweep_tol,
    "sweep-devices": _sweep_devices,
    "validate": _validate,
}


def main(argv=None):
    """Entry point; returns the process exit code"""
    try:
        cli, verbose = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as e:
        print(f"❌ Config error: {e}")
        return EXIT_CONFIG
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else EXIT_OK

    logging.basicConfig(level=logging.DEBUG if verbose else config.LOG_LEVEL,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    print(f"🛡️  fedfilter - {cli.subcommand}")
    print("=" * 60)
    try:
        return HANDLERS[cli.subcommand](cli)
    except ConfigError as e:
        print(f"❌ Config error: {e}")
        return EXIT_CONFIG
    except (FedFilterError, OSError) as e:
        print(f"❌ Error: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.debug("unhandled failure in %s", cli.subcommand, exc_info=True)
        print(f"❌ Unexpected error: {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
