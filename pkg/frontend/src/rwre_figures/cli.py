"""Command line for batch figure rendering.

Either ``rwre-figures render --spec spec.json`` (a JSON FigureSpec or a
list of them) or one flag per field:
``rwre-figures render --kind variance_loglog --input variance.csv
--output fig.png``.  Output format follows the file extension; PNG and SVG
are both supported by the backend.
"""

import argparse
import json
import sys

from .figures import KINDS, EmptyInputError, FigureSpec, SchemaError, render


def _specs_from_args(args):
    if args.spec:
        with open(args.spec) as fh:
            raw = json.load(fh)
        if isinstance(raw, dict):
            raw = [raw]
        return [FigureSpec(kind=s["kind"], input=s["input"],
                           output=s["output"]) for s in raw]
    if not (args.kind and args.input and args.output):
        raise SchemaError("provide --spec or all of --kind/--input/--output")
    return [FigureSpec(kind=args.kind, input=args.input, output=args.output)]


def main(argv=None):
    parser = argparse.ArgumentParser(prog="rwre-figures")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render")
    p.add_argument("--spec", default=None, help="JSON figure spec path")
    p.add_argument("--kind", choices=KINDS, default=None)
    p.add_argument("--input", default=None, help="input CSV path")
    p.add_argument("--output", default=None, help="output image path")
    args = parser.parse_args(argv)
    try:
        specs = _specs_from_args(args)
        for spec in specs:
            meta = render(spec)
            print(json.dumps({"output": spec.output, "kind": spec.kind,
                              **meta}))
    except (SchemaError, KeyError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 2
    except (EmptyInputError, OSError, json.JSONDecodeError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
