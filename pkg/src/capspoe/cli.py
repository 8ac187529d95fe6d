"""Command-line entry point: ``capspoe <subcommand> --config PATH ...``.

Exit status: 0 success, 1 verification or training failure, 2 usage or
input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline, verify
from .config import ConfigError, RunConfig, load_config
from .dataio import DataFormatError
from .kernels import NonFiniteError
from .synthetic import write_synthetic_idx

log = logging.getLogger("capspoe")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="run configuration (INI)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", type=Path, help="override run.out")
    p.add_argument("--data-dir", type=Path, help="directory that data.path is relative to")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capspoe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-autoencoder", help="train the convolutional front-end")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")

    p = sub.add_parser("train-capsules", help="train the capsule layer on frozen encoder features")
    _common(p)
    p.add_argument("--autoencoder", type=Path, help="autoencoder checkpoint (default: OUT/autoencoder.ckpt)")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("generate", help="sample images from each upper-layer capsule")
    _common(p)
    p.add_argument("--autoencoder", type=Path)
    p.add_argument("--capsules", type=Path)
    p.add_argument("--samples-per-capsule", type=int)

    p = sub.add_parser("diagram", help="render the routing of one dataset image as SVG")
    _common(p)
    p.add_argument("--autoencoder", type=Path)
    p.add_argument("--capsules", type=Path)
    p.add_argument("--sample-index", type=int)

    p = sub.add_parser("verify", help="check the model against exact enumeration oracles")
    _common(p, config_required=False)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("synth-data", help="write an MNIST-format IDX file of rendered digits")
    p.add_argument("path", type=Path)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out = str(args.out)
    return cfg.validate()


def _run(args) -> int:
    if args.command == "synth-data":
        if args.count < 1:
            raise ValueError("--count must be at least 1")
        write_synthetic_idx(args.path, args.count, args.seed)
        print(f"wrote {args.count} images to {args.path}")
        return EXIT_OK

    cfg = _config(args)
    if args.command == "verify":
        seed = cfg.run.seed
        results = verify.run_checks(seed, inject_fault=args.inject_fault)
        print(verify.format_report(seed, results))
        summary = verify.write_summary(pipeline.out_dir(cfg) / "verify_summary.json", seed, results)
        print(f"summary: {summary}")
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE

    if args.command == "train-autoencoder":
        _, records = pipeline.train_autoencoder_stage(cfg, args.data_dir, resume=args.resume)
        if records:
            print(f"autoencoder: {len(records)} steps, last mse {records[-1]['mse']:.6f}")
        print(f"checkpoint: {Path(cfg.run.out) / pipeline.AE_CKPT}")
    elif args.command == "train-capsules":
        _, records = pipeline.train_capsules_stage(cfg, args.data_dir, args.autoencoder, resume=args.resume)
        if records:
            print(f"capsules: {len(records)} steps, last xent {records[-1]['reconstruction_xent']:.6f}")
        print(f"checkpoint: {Path(cfg.run.out) / pipeline.CAPS_CKPT}")
    elif args.command == "generate":
        path, images = pipeline.generate_grid(cfg, args.samples_per_capsule, args.autoencoder, args.capsules)
        print(f"wrote {len(images)} images to {path}")
    elif args.command == "diagram":
        path = pipeline.diagram_stage(cfg, args.sample_index, args.data_dir, args.autoencoder, args.capsules)
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except NonFiniteError as exc:
        print(f"capspoe: training failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ConfigError, DataFormatError, pipeline.CheckpointMismatchError, FileNotFoundError,
            IndexError, ValueError) as exc:
        print(f"capspoe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
