"""Command line entry point: ``cflow study``, ``cflow run`` and ``cflow verify-bdf``."""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .bdf import bdf_scheme, stability_condition, verify_identity
from .benchmark import ANISOTROPY, run_benchmark_setup
from .flows import FlowConfig, FlowOperators, run_flow
from .presets import load_preset, preset_names
from .study import load_config, parse_scheme, parse_step, run_study, with_output

RECORD_FIELDS = [
    "n",
    "energy",
    "kinetic",
    "lyapunov",
    "delta_cons",
    "max_violation",
    "oracle_mismatch",
    "stopping_residual",
    "identity_residual",
    "constraint_residual",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("study", help="run a step-size sweep from a config file")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="key = value config file")
    source.add_argument("--preset", choices=preset_names(), help="named configuration")
    p.add_argument("--out", help="CSV output path (overrides the config)")
    p.add_argument("--quiet", action="store_true", help="suppress per-run progress lines")

    p = sub.add_parser("run", help="single run; prints one CSV record per step")
    p.add_argument("--scheme", required=True, help="AF_BDF1, AF_BDF2, AF_BDFK<k>, GF_BDF1 or GF_BDF2")
    p.add_argument("--s", required=True, help="step size, e.g. 0.125 or 2^-3")
    p.add_argument("--k", type=int, help="order of the modified scheme (alternative to AF_BDFK<k>)")
    p.add_argument("--n", type=int, default=32, help="mesh subdivisions per side")
    p.add_argument("--metric", default="H1", type=str.upper, choices=["H1", "H1_FULL", "L2"])
    p.add_argument("--alpha", type=float, default=25.0)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--t-max", type=float, default=1e4)
    p.add_argument("--max-steps", type=int, help="stop after this many steps")
    p.add_argument("--every", type=int, default=1, help="print every N-th record (the last one is always printed)")
    p.add_argument("--no-oracle", action="store_true", help="skip the violation oracle")

    p = sub.add_parser("verify-bdf", help="print and check BDF-k coefficients")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--csv", action="store_true", help="emit the coefficients as CSV")
    p.add_argument("--trials", type=int, default=100, help="random sequences for the identity check")
    return parser


def _cmd_study(args) -> int:
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if args.out:
        cfg = with_output(cfg, args.out)
    if cfg.output is None:
        raise ValueError("no output path: pass --out or set 'output' in the config")

    def progress(row):
        if not args.quiet:
            print(f"{row.scheme} s={row.s:g} N={row.iterations} delta={row.delta_cons:.4e} E={row.energy:.4f}", file=sys.stderr)

    rows = run_study(cfg, progress=progress)
    print(f"wrote {len(rows)} rows to {cfg.output}")
    return 0


def _cmd_run(args) -> int:
    scheme, k = parse_scheme(args.scheme if args.k is None or args.scheme.upper() != "AF_BDFK_MODIFIED" else f"AF_BDFK{args.k}")
    cfg = FlowConfig(
        scheme=scheme, s=parse_step(args.s), k=k, alpha=args.alpha, metric=args.metric.upper(),
        eps=args.eps, t_max=args.t_max, oracle=not args.no_oracle,
    )
    setup = run_benchmark_setup(args.n)
    ops = FlowOperators.build(setup.space, ANISOTROPY, cfg.metric)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    pending = []

    def emit(rec):
        writer.writerow(["" if getattr(rec, f) is None else repr(getattr(rec, f)) if isinstance(getattr(rec, f), float) else getattr(rec, f) for f in RECORD_FIELDS])

    def callback(rec):
        pending[:] = [rec]
        if rec.n % args.every == 0:
            emit(rec)
            pending.clear()

    result = run_flow(ops, cfg, setup.u0, callback=callback, max_steps=args.max_steps)
    if pending:
        emit(pending[0])
    print(f"# {result.reason} after {result.n_steps} steps", file=sys.stderr)
    return 0


def _cmd_verify_bdf(args) -> int:
    sch = bdf_scheme(args.k)
    sch.check_invariants()
    if args.csv:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["family", "index", "value"])
        for name in ("delta", "tilde_delta", "gamma"):
            for j, c in enumerate(getattr(sch, name)):
                writer.writerow([name, j, str(c)])
        for (j, ell), c in sorted(sch.beta.items()):
            writer.writerow(["beta", f"{j};{ell}", str(c)])
    else:
        print(f"BDF-{args.k}")
        for name in ("delta", "tilde_delta", "gamma"):
            print(f"  {name:12s}" + " ".join(str(c) for c in getattr(sch, name)))
        print("  beta        " + ", ".join(f"({j},{ell}): {c}" for (j, ell), c in sorted(sch.beta.items())))
    rng = np.random.default_rng(12345)
    worst = 0.0
    for _ in range(args.trials):
        a = rng.standard_normal(args.k + 1)
        worst = max(worst, verify_identity(sch, a, 1.0, args.k))
    ok = worst <= 1e-12
    out = sys.stderr if args.csv else sys.stdout
    print(f"identity residual over {args.trials} random sequences: {worst:.3e} ({'ok' if ok else 'FAILED'})", file=out)
    if args.k >= 3:
        value, holds = stability_condition(args.k)
        print(f"stability condition value {value:.6g}: {'holds' if holds else 'fails'}", file=out)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"study": _cmd_study, "run": _cmd_run, "verify-bdf": _cmd_verify_bdf}
    try:
        return handlers[args.command](args)
    except Exception as exc:  # report any failure as one diagnostic line
        print(f"cflow: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
