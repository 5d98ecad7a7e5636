"""Command-line entry: render one figure kind from experiment output files."""

from __future__ import annotations

import argparse
import json
import sys

from .render import KINDS, FigureInputError, PlotJob, render

_INPUT_FLAGS = {
    "params": ("trace", "--trace"),
    "theta-m": ("trace", "--trace"),
    "freqresp": ("freqresp", "--freqresp"),
    "spectrum": ("spectrum", "--spectrum"),
    "feedforward": ("period", "--period"),
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="afc-figures",
        description="Render experiment CSV outputs into figure files",
    )
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--trace", help="trace CSV (params, theta-m)")
    ap.add_argument("--freqresp", help="frequency-response CSV (freqresp)")
    ap.add_argument("--spectrum", help="spectrum CSV (spectrum)")
    ap.add_argument("--period", help="one-period feedforward CSV (feedforward)")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--title", default="", help="figure title override")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    key, flag = _INPUT_FLAGS[args.kind]
    path = getattr(args, key)
    if path is None:
        print(f"error: {args.kind} needs {flag}", file=sys.stderr)
        return 1
    job = PlotJob(kind=args.kind, inputs={key: path}, out_path=args.out, title=args.title)
    try:
        stats = render(job)
    except FigureInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"out": args.out, **stats}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
