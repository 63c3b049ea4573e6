"""`plots render --kind <k> --in <csv...> --out <file>`."""

from __future__ import annotations

import argparse
import sys

from .render import REQUIRED_COLUMNS, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plots", description="Render figures from ptmeta CSV outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("--kind", required=True, choices=sorted(REQUIRED_COLUMNS))
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input CSV file(s)")
    p.add_argument("--out", required=True, help="output image path (png/pdf/svg)")
    return parser


def dispatch(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        render(args.kind, args.inputs, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
