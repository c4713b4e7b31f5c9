"""Command-line front end: design, evaluate, render, simulate, report.

Heavy imports (numpy, scipy) are deferred until after argument parsing so
that ``--threads`` can pin the BLAS thread pools via environment variables
before the libraries initialize.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from importlib import resources

from .errors import BsmError

log = logging.getLogger("bsmkit")


def _add_common(parser, config=True, threads=True):
    if config:
        parser.add_argument(
            "--config",
            help="experiment config file (default: the packaged full-scale setup)",
        )
    if threads:
        parser.add_argument(
            "--threads", type=int, help="pin BLAS/OpenMP thread pools to this count"
        )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsmkit",
        description="Design and evaluate binaural rendering filters for "
        "arbitrary microphone arrays.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="design the filter banks and write .bsmf files")
    _add_common(p)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        help="ILD weight for the joint optimization (overrides the config)",
    )
    p.add_argument(
        "--crossover-hz",
        type=float,
        help="crossover frequency for the merged banks (overrides the config)",
    )

    p = sub.add_parser("evaluate", help="compare designed banks and write CSV reports")
    _add_common(p)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument(
        "--banks", help="directory holding the designed banks (default: the output dir)"
    )

    p = sub.add_parser("render", help="render a multichannel WAV to binaural stereo")
    _add_common(p, config=False)
    p.add_argument("--bank", required=True, help="filter bank (.bsmf) to apply")
    p.add_argument("--in", dest="wav_in", required=True, help="input multichannel WAV")
    p.add_argument("--out", required=True, help="output stereo WAV")
    p.add_argument("--taps", type=int, default=1024, help="FIR length (power of two)")
    p.add_argument(
        "--format",
        choices=("float32", "pcm16", "pcm24"),
        default="float32",
        help="output sample format",
    )

    p = sub.add_parser("simulate", help="simulate the array recording of a mono WAV")
    _add_common(p)
    p.add_argument("--theta-deg", type=float, required=True, help="source colatitude")
    p.add_argument("--phi-deg", type=float, required=True, help="source azimuth")
    p.add_argument("--in", dest="wav_in", required=True, help="input mono WAV")
    p.add_argument("--out", required=True, help="output multichannel WAV")
    p.add_argument("--taps", type=int, default=1024, help="FIR length (power of two)")
    p.add_argument(
        "--format",
        choices=("float32", "pcm16", "pcm24"),
        default="float32",
        help="output sample format",
    )

    p = sub.add_parser("report", help="merge evaluation CSVs into a plot-ready bundle")
    _add_common(p, config=False, threads=False)
    p.add_argument("--out", required=True, help="directory holding the evaluation CSVs")
    return parser


def _pin_threads(count: int) -> None:
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(count)


def _resolve_config(args, experiment):
    overrides = {}
    if getattr(args, "out", None):
        overrides["output.directory"] = args.out
    if getattr(args, "lam", None) is not None:
        overrides["imagls.lambda"] = args.lam
    if getattr(args, "crossover_hz", None) is not None:
        overrides["design.crossover_hz"] = args.crossover_hz
    if args.config is not None:
        return experiment.load_config(args.config, overrides)
    packaged = resources.files("bsmkit").joinpath("data/fullscale.cfg")
    with resources.as_file(packaged) as path:
        return experiment.load_config(path, overrides)


def _dispatch(args) -> int:
    from . import experiment

    if args.command == "design":
        config = _resolve_config(args, experiment)
        manifest = experiment.run_design(config, log=log.info)
        print(
            f"selected lambda {manifest['selected_lambda']:g}; "
            f"banks and manifest written to {config.output_directory}"
        )
    elif args.command == "evaluate":
        config = _resolve_config(args, experiment)
        experiment.run_evaluate(config, banks_dir=args.banks, log=log.info)
        print(f"evaluation tables written to {config.output_directory}")
    elif args.command == "render":
        experiment.run_render(
            args.bank, args.wav_in, args.out, taps=args.taps, fmt=args.format
        )
        print(f"binaural render written to {args.out}")
    elif args.command == "simulate":
        config = _resolve_config(args, experiment)
        experiment.run_simulate(
            config,
            args.theta_deg,
            args.phi_deg,
            args.wav_in,
            args.out,
            taps=args.taps,
            fmt=args.format,
        )
        print(f"simulated array recording written to {args.out}")
    elif args.command == "report":
        experiment.run_report(args.out)
        print(f"report bundle written to {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        _pin_threads(args.threads)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args)
    except BsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
