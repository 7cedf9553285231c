"""Command line: one panel per invocation."""
from __future__ import annotations

import argparse
import sys

from .panels import PANELS, FigureSpec, render
from .schema import SchemaError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lineagefigs",
        description="Render figures from lineagesim output directories")
    p.add_argument("--input", required=True, help="directory with trace/report files")
    p.add_argument("--panel", required=True, choices=PANELS)
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--xlim", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--ylim", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--coord", type=int, default=0, help="trait coordinate")
    p.add_argument("--time-bins", type=int, default=160)
    p.add_argument("--trait-bins", type=int, default=120)
    p.add_argument("--dpi", type=int, default=150)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(input_dir=args.input, panel=args.panel,
                          out_path=args.out,
                          xlim=tuple(args.xlim) if args.xlim else None,
                          ylim=tuple(args.ylim) if args.ylim else None,
                          coord=args.coord, time_bins=args.time_bins,
                          trait_bins=args.trait_bins, dpi=args.dpi)
        info = render(spec)
    except SchemaError as exc:
        print(f"input does not match the documented schema: {exc}",
              file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    extra = (f", {info.polylines} polylines" if info.polylines is not None else "")
    print(f"wrote {info.panel} panel to {info.out_path}{extra}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
