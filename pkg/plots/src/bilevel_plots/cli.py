"""Command line for trace figure rendering: `bilevel-plots render --spec f.json`."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import RenderError, render_panels, spec_from_dict


def cmd_render(args) -> int:
    spec_path = Path(args.spec)
    try:
        with open(spec_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read spec {spec_path}: {exc}", file=sys.stderr)
        return 1
    try:
        specs = spec_from_dict(raw, base_dir=spec_path.parent)
        written = render_panels(specs)
    except RenderError as exc:
        where = f" ({exc.path})" if exc.path else ""
        print(f"render error{where}: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevel-plots",
        description="Render log-scale convergence panels from solver trace CSVs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render the figures described by a JSON spec")
    p_render.add_argument("--spec", required=True, help="JSON figure spec")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
