"""Command-line entry point: ``convert <in.sofa> <out.bsmd> [options]``."""

from __future__ import annotations

import argparse
import sys

from .convert import ConversionError, convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convert",
        description="Convert a SOFA HRTF archive to a BSMD container.",
    )
    parser.add_argument("sofa_path", help="input SOFA (HDF5) archive")
    parser.add_argument("out_path", help="output BSMD container")
    parser.add_argument(
        "--fft-size", type=int, default=2048, help="DFT length (default 2048)"
    )
    parser.add_argument(
        "--manifest", help="also write the conversion manifest as JSON here"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = convert(args.sofa_path, args.out_path, fft_size=args.fft_size)
        if args.manifest:
            manifest.save(args.manifest)
    except ConversionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(
        f"wrote {args.out_path}: {manifest.n_directions} directions x "
        f"{manifest.n_frequencies} bins at {manifest.sample_rate_hz:g} Hz"
        + (f" ({len(manifest.warnings)} warning(s))" if manifest.warnings else "")
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
