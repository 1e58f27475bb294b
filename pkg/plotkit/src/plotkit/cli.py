"""Command line entry point: render figure recipes to image files."""

import argparse
import sys

from .render import RecipeError, load_recipe, render
from .schema import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render simulator CSV/JSON artifacts into figures")
    parser.add_argument("recipes", nargs="+",
                        help="JSON recipe files (kind, inputs, output)")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    for path in args.recipes:
        try:
            written = render(load_recipe(path))
        except (RecipeError, SchemaError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if not args.quiet:
            for f in written:
                print(f"wrote {f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
