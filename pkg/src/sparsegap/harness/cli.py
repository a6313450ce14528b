"""Command-line entry point.

Exit codes: 0 success, 2 configuration / argument error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import InvalidArgument, NumericError
from ..synthgen import GenConfig, Split, gen_mixing, sample_split, write_dataset_csv, write_matrix_csv
from .config import EXPERIMENTS, ConfigError, default_config, load_config
from .experiments import run_experiment
from .report import emit_report, read_records_csv, write_timing_csv

log = logging.getLogger("sparsegap")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common(p):
    p.add_argument("--config", type=Path, help="JSON experiment config (schema 1)")
    p.add_argument("--seed", type=int, help="master seed (u64)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for grid cells")
    p.add_argument("--large", action="store_true", help="include d_z = 10^4 / p = 10^5 cells")
    p.add_argument("--no-svg", action="store_true", help="skip figure rendering")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsegap", description="Sparse inference vs. sparse autoencoders "
                                     "under superposition: experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", help="write a synthetic dataset and its mixing matrix as CSV")
    _common(g)
    g.add_argument("--d-z", type=int, default=100)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--p", type=int, default=1000)
    g.add_argument("--p-test", type=int, default=2000)
    g.add_argument("--d-y", type=int, default=None, help="defaults to the compressed-sensing bound")
    for name in EXPERIMENTS:
        _common(sub.add_parser(name, help=f"run the {name} sweep"))
    _common(sub.add_parser("report", help="re-render CSV aggregates and SVG figures from *_records.csv"))
    return parser


def _gen_data(args, out: Path):
    seed = args.seed if args.seed is not None else 0
    cfg = GenConfig(d_z=args.d_z, k=args.k, p=args.p, seed=seed, d_y=args.d_y)
    test = GenConfig(d_z=args.d_z, k=args.k, p=args.p_test, seed=seed, d_y=args.d_y)
    A = gen_mixing(cfg.obs_dim, cfg.d_z, seed)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "mixing.csv", A.entries)
    write_dataset_csv(out / "data.csv", sample_split(cfg, A, Split.ID_TRAIN))
    write_dataset_csv(out / "data.csv", sample_split(test, A, Split.ID_TEST), append=True)
    write_dataset_csv(out / "data.csv", sample_split(test, A, Split.OOD_TEST), append=True)
    log.info("wrote %s and %s", out / "data.csv", out / "mixing.csv")


def _report(args, out: Path):
    files = sorted(out.glob("*_records.csv"))
    if not files:
        raise ConfigError(f"no *_records.csv files in {out}")
    records = [r for f in files for r in read_records_csv(f)]
    for path in emit_report(records, out, svg=not args.no_svg):
        log.info("wrote %s", path)


def _experiment(args, name: str):
    cfg = load_config(args.config, name, args.large) if args.config else default_config(name, args.large)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.master_seed = args.seed
    out = args.out if args.out is not None else Path(cfg.output_dir)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    records = run_experiment(cfg, threads=args.threads)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}_config.json").write_text(cfg.to_json() + "\n")
    write_timing_csv(out / f"{name}_timing.csv", records)
    for path in emit_report(records, out, svg=not args.no_svg):
        log.info("wrote %s", path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            _gen_data(args, args.out or Path("data"))
        elif args.command == "report":
            _report(args, args.out or Path("results"))
        else:
            _experiment(args, args.command)
    except (ConfigError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
