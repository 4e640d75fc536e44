"""Command-line entry point: render one figure from a spec file or flags."""
from __future__ import annotations

import argparse
import json
import sys

from .figures import KINDS, FigureSpec, PlotSchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="maxentlab-plots",
        description="Render maxentlab figures from CSV artifacts.")
    parser.add_argument("--spec", help="JSON figure-spec file")
    parser.add_argument("--kind", choices=KINDS)
    parser.add_argument("--input", action="append", default=[],
                        help="input CSV (repeatable)")
    parser.add_argument("--out", help="output image path")
    parser.add_argument("--title")
    parser.add_argument("--xlabel")
    parser.add_argument("--ylabel")
    args = parser.parse_args(argv)

    try:
        if args.spec:
            spec = FigureSpec.from_json(args.spec)
        else:
            if not (args.kind and args.input and args.out):
                parser.error("without --spec, provide --kind, --input and --out")
            spec = FigureSpec(kind=args.kind, inputs=args.input,
                              output=args.out, title=args.title,
                              xlabel=args.xlabel, ylabel=args.ylabel)
        counts = render(spec)
    except (PlotSchemaError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(counts))
    return 0


if __name__ == "__main__":
    sys.exit(main())
