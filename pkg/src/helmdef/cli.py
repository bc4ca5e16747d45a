"""Command-line entry point ``helmdef``.

Sub-commands
------------
run
    One solve from a config file plus ``--set key=value`` overrides.
scale
    Strong or weak scaling sweep over worker counts.
derive-stencils
    Compose the high-order transfers with the 5-point operator and print
    the resulting 5x5 coarse stencils.
optimize-9pt
    Print eigenvalue-aligned nine-point coefficients for a wavenumber.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

logger = logging.getLogger("helmdef")


def _parser():
    ap = argparse.ArgumentParser(prog="helmdef", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    sc = sub.add_parser("scale", help="scaling sweep")
    sc.add_argument("--config", help="key = value config file")
    sc.add_argument("--workers", required=True, help="comma-separated worker counts, e.g. 1,4")
    sc.add_argument("--mode", choices=("strong", "weak"), default="strong")
    sc.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    sc.add_argument("--json", help="write the records to this file")

    sub.add_parser("derive-stencils", help="print the composed 5x5 coarse stencils")

    op = sub.add_parser("optimize-9pt", help="eigenvalue-aligned nine-point coefficients")
    op.add_argument("--k", type=float, required=True)
    op.add_argument("--h-ref", type=float, default=1e-4)
    op.add_argument("--decimals", type=int, default=3)
    return ap


def _cmd_run(args):
    from .experiments import load_config, run_experiment
    from .grid import get_comm
    cfg = load_config(args.config, args.overrides)
    res = run_experiment(cfg)
    if get_comm().rank == 0:
        print(",".join(f"{k}={v}" for k, v in res.row.items()))
    return EXIT_OK


def _cmd_scale(args):
    from .experiments import load_config, scaling_harness
    cfg = load_config(args.config, args.overrides)
    try:
        counts = [int(t) for t in args.workers.split(",") if t.strip()]
    except ValueError:
        from .experiments import ConfigError
        raise ConfigError(f"bad worker list {args.workers!r}", "workers") from None
    recs = scaling_harness(cfg, counts, mode=args.mode)
    print(f"{'np':>4} {'grid':>11} {'iters':>6} {'time[s]':>10} {'S_p':>7} {'E_p':>7}")
    for r in recs:
        print(f"{r.workers:>4} {f'{r.nx}x{r.ny}':>11} {r.outer_iters:>6} {r.wall_time:>10.4f} "
              f"{r.speedup:>7.3f} {r.efficiency:>7.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([r.as_dict() for r in recs], fh, indent=2)
    return EXIT_OK


def _fmt_matrix(m):
    width = max(len(str(v)) for v in np.ravel(m))
    return "\n".join("  [" + " ".join(f"{str(v):>{width}}" for v in row) + "]" for row in m)


def _cmd_derive(args):
    from .coarse import derive_red_glk_stencils
    lap, mass = derive_red_glk_stencils()
    lap_int = (lap.coeffs * 1024).astype(int)
    mass_int = (mass.coeffs * 64 ** 2).astype(int)
    print("Laplacian, times 1/(256 (2h)^2):")
    print(_fmt_matrix(lap_int))
    print(f"  entry sum: {int(lap_int.sum())}")
    print("k^2 term, times k^2/64^2:")
    print(_fmt_matrix(mass_int))
    return EXIT_OK


def _cmd_optimize(args):
    from .coarse import find_min_mode, nine_point_eigenvalue, optimize_9pt_coefficients
    p, q, lam = find_min_mode(args.k)
    c = optimize_9pt_coefficients(args.k, h_ref=args.h_ref, decimals=args.decimals)
    H = 2 * args.h_ref
    print(f"min mode: i={p} j={q}  (i^2+j^2) pi^2 - k^2 = {lam:.3f}")
    print(f"a0={c[0]:.{args.decimals}f} as={c[1]:.{args.decimals}f} ac={c[2]:.{args.decimals}f} "
          f"b0={c[3]:g} bs={c[4]:g} bc={c[5]:g}")
    print(f"coarse eigenvalue at (p, q) = ({p}, {q}): "
          f"{nine_point_eigenvalue(c, args.k, H, p, q):.4f}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "scale": _cmd_scale, "derive-stencils": _cmd_derive,
             "optimize-9pt": _cmd_optimize}


def main(argv=None) -> int:
    from .experiments import ConfigError
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"helmdef: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"helmdef: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
