"""
Command-line entry point.

Exit codes: 0 success, 1 a verification check failed, 2 an input could not be
read or parsed, 3 the configuration is invalid.
"""
from __future__ import annotations

import argparse
import logging
import sys
import zipfile
from pathlib import Path
from typing import Sequence

import numpy as np
import polars as pl
import toml

from pyrgate import __version__
from pyrgate.config import RunConfig, dump_config, load_config, parse_config
from pyrgate.data import BLOB_SCALES, generate_sample
from pyrgate.errors import ConfigError
from pyrgate.io import write_pgm
from pyrgate.metrics import level_summary, summarize
from pyrgate.model import PyramidModel
from pyrgate.params import ParameterSet
from pyrgate.records import records_frame
from pyrgate.train import ablate, evaluate_params, predict, train
from pyrgate.verify import FAULTS, run_checks

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_VERIFY, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3


def _config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out is not None:
        changes["out_dir"] = args.out
    return config.replace(**changes) if changes else config


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_snapshot(path: str) -> tuple[ParameterSet, RunConfig]:
    try:
        params, config_text = ParameterSet.load(path)
    except (ValueError, zipfile.BadZipFile) as e:
        raise OSError(f"cannot read snapshot {path}: {e}") from e
    config = parse_config(config_text) if config_text else RunConfig()
    expected = PyramidModel(config).init_params(np.random.default_rng(0))
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise OSError(f"snapshot {path} does not match its configuration: "
                      f"missing {missing[:3]}, unexpected {extra[:3]}")
    for name, param in expected.items():
        if params[name].value.shape != param.value.shape:
            raise OSError(f"snapshot {path}: {name} has shape {params[name].value.shape}, "
                          f"expected {param.value.shape}")
    return params, config


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    out = _out_dir(config)
    state = train(config)
    state.metrics_frame().write_csv(out / "metrics.csv")
    state.records_frame().write_csv(out / "gates.csv")
    state.params.save(out / "params.npz", dump_config(config))
    (out / "config.toml").write_text(dump_config(config))
    logger.info("wrote metrics, gate records and snapshot to %s", out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    params, config = _load_snapshot(args.snapshot)
    if args.out is not None:
        config = config.replace(out_dir=args.out)
    scores = evaluate_params(config, params)
    table = level_summary(scores)
    table.write_csv(_out_dir(config) / "eval.csv")
    metrics = summarize(scores)
    print(table)
    print(f"mse {metrics['mse']:.6f} f1 {metrics['f1']:.4f}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_checks(fault=args.inject_fault)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print(f"first failing check: {failed[0].name}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _config(args)
    table = ablate(args.axis, config)
    table.write_csv(_out_dir(config) / f"ablation_{args.axis}.csv")
    with pl.Config(tbl_rows=-1, tbl_cols=-1, tbl_width_chars=200):
        print(table)
    return EXIT_OK


def cmd_export_gates(args: argparse.Namespace) -> int:
    """
    Write, per sample seed, the 4x4 path openness matrix as CSV and PGM and
    the intra-scale gate openness as CSV.
    """
    params, config = _load_snapshot(args.snapshot)
    if args.out is not None:
        config = config.replace(out_dir=args.out)
    out = _out_dir(config)
    model = PyramidModel(config)
    radius_range = BLOB_SCALES[args.blob_scale]
    blob_count = (config.blob_count[0], config.blob_count[1])
    for seed in args.seeds:
        sample = generate_sample(seed, blob_count, config.image_size, radius_range)
        _, record = predict(model, params, sample)
        matrix = record.csg_w if record.csg_w is not None else np.zeros((4, 4))
        pl.DataFrame(matrix, schema=["to_p2", "to_p3", "to_p4", "to_p5"], orient="row") \
            .with_columns(pl.Series("from", ["c2", "c3", "c4", "c5"])) \
            .select("from", "to_p2", "to_p3", "to_p4", "to_p5") \
            .write_csv(out / f"gates_seed{seed}.csv")
        write_pgm(out / f"gates_seed{seed}.pgm", matrix)
        records_frame([record]).filter(pl.col("kind").str.starts_with("isg")) \
            .write_csv(out / f"isg_seed{seed}.csv")
    logger.info("exported gate states of %d samples to %s", len(args.seeds), out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyrgate", description="Gated feature pyramid experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", help="output directory, overrides out_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("train", help="train a model and write metrics, gate records and a snapshot")
    run_options(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a snapshot on the validation seeds")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("verify", help="run the numerical self-checks")
    p.add_argument("--inject-fault", choices=FAULTS)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("ablate", help="compare configurations along one axis")
    p.add_argument("axis")
    run_options(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("export-gates", help="export gate state matrices for sample seeds")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--blob-scale", choices=sorted(BLOB_SCALES), default="any")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_export_gates)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, toml.TomlDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
