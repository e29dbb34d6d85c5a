"""CLI: `iwplots render <figure-spec-file> [...]`."""

from __future__ import annotations

import argparse
import sys

from .render import FigureSpecError, load_figure_spec, render
from .schemas import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="iwplots",
                                     description="render figures from run outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render one or more figure specs")
    p_render.add_argument("specs", nargs="+")
    args = parser.parse_args(argv)

    status = 0
    for path in args.specs:
        try:
            result = render(load_figure_spec(path))
            print(f"wrote {result['output']}")
        except (FigureSpecError, SchemaError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            status = 2
    return status


if __name__ == "__main__":
    sys.exit(main())
