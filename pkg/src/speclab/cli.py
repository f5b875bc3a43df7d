"""Command-line entry point.

One subcommand per experiment stage plus ``report``.  All experiment
parameters live in the TOML config; the command line only selects the
stage, the master seed, the worker count, and the output directory.
The single supported environment variable, ``SPECLAB_OUT``, overrides
the configured output directory (an explicit ``--out`` wins over it).
"""
from __future__ import annotations

import argparse
import os
import sys

from pathlib import Path

import toml

from .config import STAGES, ConfigError, default_config_dict, parse_config
from .io import ChecksumError, SchemaError, read_csv
from .report import report
from .runner import SCHEMAS, run

OUT_ENV = "SPECLAB_OUT"


def _load_config_dict(path: str | None) -> dict:
    if path is None:
        return default_config_dict()
    try:
        return toml.load(path)
    except (OSError, toml.TomlDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _partition_table(path: Path) -> str:
    cols, rows = read_csv(path, SCHEMAS["partition.csv"])
    at = {c: i for i, c in enumerate(cols)}
    lines = [f"{'n':>4} {'j':>4}  {'interval':<30}{'members':>8}"]
    for row in rows:
        lo = float(row[at["lambda_minus"]])
        hi = float(row[at["lambda_plus"]])
        interval = f"[{lo:.6g}, {hi:.6g})"
        lines.append(
            f"{row[at['n']]:>4} {row[at['j']]:>4}  {interval:<30}"
            f"{row[at['members']]:>8}"
        )
    return "\n".join(lines)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--config",
        metavar="PATH",
        default=None,
        help="TOML experiment config (defaults to the built-in minimal setup)",
    )
    p.add_argument(
        "--seed", type=int, metavar="U64", default=None, help="master seed override"
    )
    p.add_argument(
        "--workers", type=int, metavar="N", default=None, help="worker thread count"
    )
    p.add_argument(
        "--out", metavar="DIR", default=None, help="output directory override"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speclab",
        description="Spectral experiments on planar Dirichlet domains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for st in STAGES:
        p = sub.add_parser(st, help=f"run the {st} stage")
        _add_common(p)
        if st == "heatkernel":
            p.add_argument("--t", type=float, default=None, help="kernel time")
            p.add_argument(
                "--x", type=float, nargs=2, metavar=("X", "Y"), default=None,
                help="source point",
            )
            p.add_argument(
                "--y", type=float, nargs=2, metavar=("X", "Y"), default=None,
                help="target point",
            )
            p.add_argument("--n-paths", type=int, default=None, help="path count")
            p.add_argument("--dt", type=float, default=None, help="step size")
            p.add_argument(
                "--bridge", choices=("on", "off"), default=None,
                help="boundary-crossing correction",
            )
            p.add_argument(
                "--convention",
                choices=("half_generator", "full_generator"),
                default=None,
                help="time convention",
            )
    p = sub.add_parser("report", help="summarize a run directory")
    _add_common(p)
    return parser


_HEATKERNEL_KEYS = (
    ("t", "t"),
    ("x", "x"),
    ("y", "y"),
    ("n_paths", "n_paths"),
    ("dt", "dt"),
    ("bridge", "bridge"),
    ("convention", "convention"),
)


def _apply_heatkernel_flags(data: dict, args: argparse.Namespace) -> dict:
    section = dict(data.get("heatkernel", {}))
    for attr, key in _HEATKERNEL_KEYS:
        value = getattr(args, attr, None)
        if value is None:
            continue
        if attr == "bridge":
            value = value == "on"
        elif attr in ("x", "y"):
            value = list(value)
        section[key] = value
    out = dict(data)
    out["heatkernel"] = section
    return out


def _resolve_out(flag: str | None, config_dir: str | None) -> str | None:
    if flag is not None:
        return flag
    env = os.environ.get(OUT_ENV)
    if env:
        return env
    return config_dir


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < (1 << 64):
            raise ConfigError(f"--seed must fit in 64 bits, got {args.seed}")

        if args.command == "report":
            out = _resolve_out(args.out, None)
            if out is None:
                raise ConfigError(
                    f"report needs --out DIR (or {OUT_ENV}) pointing at a run"
                )
            print(report(out))
            return 0

        data = _load_config_dict(args.config)
        if args.command == "heatkernel":
            data = _apply_heatkernel_flags(data, args)
        cfg = parse_config(data)
        out = _resolve_out(args.out, cfg.out_dir)
        manifest = run(
            cfg,
            stages=[args.command],
            seed=args.seed,
            workers=args.workers,
            out_dir=out,
        )
        record = manifest["stages"][args.command]
        files = ", ".join(sorted(record["outputs"])) or "-"
        print(
            f"{args.command}: {record['status']} "
            f"({record['wall_time_s']:.2f} s) -> {files} in {out}"
        )
        if record["status"] == "ok" and args.command == "partition":
            print(_partition_table(Path(out) / "partition.csv"))
        if record["status"] != "ok":
            print(f"error: {record['error']}", file=sys.stderr)
            return 1
        return 0
    except (ConfigError, SchemaError, ChecksumError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
