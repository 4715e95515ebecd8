"""``lie-svi`` command line: simulate, reference, converge-n, converge-h, invariants.

Exit codes: 0 success, 1 configuration error, 2 nonconvergence,
3 reference cross-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .stepper import IntegrationError

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_REFERENCE = 0, 1, 2, 3

COMMANDS = ("simulate", "reference", "converge-n", "converge-h", "invariants")


def _report_simulate(cfg, out):
    rec = harness.cmd_simulate(cfg, out)
    print(f"{harness.describe(cfg)}: {len(rec.rows)} steps written to {out / 'simulate.csv'}")


def _report_reference(cfg, out):
    err = harness.cmd_reference(cfg, out)
    print(f"spectral vs splitting max group error {err:.3e}")


def _report_converge_n(cfg, out):
    table, slope = harness.cmd_converge_n(cfg, out)
    for value, se, ce, ok in table.rows:
        print(f"n={int(value):3d} step_error={se:.3e} curve_error={ce:.3e}{'' if ok else ' FAILED'}")
    print(f"fitted slope of ln(error) per unit n: {slope:.3f}")


def _report_converge_h(cfg, out):
    table, order, expected = harness.cmd_converge_h(cfg, out)
    for value, se, _, ok in table.rows:
        print(f"h={value:.6g} error={se:.3e}{'' if ok else ' FAILED'}")
    print(f"fitted order {order:.3f} (nominal {expected} for n={cfg.n})")


def _report_invariants(cfg, out):
    for i, rep in enumerate(harness.cmd_invariants(cfg, out)):
        print(f"run {i}: C drift {rep.C_drift:.3e} H drift {rep.H_drift:.3e} "
              f"energy drift {rep.energy_drift:.3e}{'' if rep.ok else ' FAILED'}")


_HANDLERS = {
    "simulate": _report_simulate,
    "reference": _report_reference,
    "converge-n": _report_converge_n,
    "converge-h": _report_converge_h,
    "invariants": _report_invariants,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lie-svi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment description")
        p.add_argument("--out", default=None, help="output directory (default: config 'output' or runs/)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output or "runs")
    try:
        _HANDLERS[args.command](cfg, out)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, harness.SweepFailure) as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except harness.ReferenceMismatch as exc:
        print(f"reference check failed: {exc}", file=sys.stderr)
        return EXIT_REFERENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
