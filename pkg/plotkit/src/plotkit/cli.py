"""``plot`` command line entry point."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, MissingColumnsError, NoDataError, read_rows, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="render one figure from experiment CSVs"
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument(
        "--in", dest="inputs", required=True, nargs="+", metavar="CSV",
        help="input CSV file(s)",
    )
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        rows = read_rows(args.inputs)
        render(args.kind, rows, args.out)
    except NoDataError:
        print("no data", file=sys.stderr)
        return 0
    except MissingColumnsError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    print(args.out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
