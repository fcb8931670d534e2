"""qsd-fig: render figures from qsd-toolkit output files.

    qsd-fig records          --in rec_*.csv [--mean ensemble_mean.csv]
                             [--fit decay_fit.json] --out records.png
    qsd-fig trajectory       --in traj_*.csv --out traj.png
    qsd-fig conditional-mean --in conditional_mean_*.json --out cond.png
    qsd-fig occupancy        --in occupancy.json [--times 1 2 4] --out occ.png

Exit codes: 0 on success, 2 on missing/ill-formed input or usage errors.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .io import InputError
from .render import KINDS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsd-fig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind.replace("_", "-"))
        sp.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input file(s) in the toolkit's exported schema")
        sp.add_argument("--out", required=True, help="output image path")
        if kind == "records":
            sp.add_argument("--mean", help="ensemble-mean CSV overlay")
            sp.add_argument("--fit", help="decay-fit JSON overlay")
        if kind == "occupancy":
            sp.add_argument("--times", nargs="+", type=float,
                            help="subset of grid times to draw")
            sp.add_argument("--cmap", default="magma")
        sp.set_defaults(kind=kind)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            figure_kind=args.kind,
            inputs=args.inputs,
            out=args.out,
            mean=getattr(args, "mean", None),
            fit=getattr(args, "fit", None),
            times=getattr(args, "times", None),
            cmap=getattr(args, "cmap", "magma"),
        )
        out = render(spec)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
