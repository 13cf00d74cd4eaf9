"""Command line entry point ``hrsync``.

Subcommands: ``simulate``, ``constants``, ``sync-report``, ``convergence``.
Exit codes: 0 success, 2 configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .integrator import DivergenceError
from .linsolve import LinearSolveError
from .runs import (build_problem, constants_table, convergence_study, dump_json, simulate,
                   summary_document, write_timeseries)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hrsync", description="Boundary coupled Hindmarsh-Rose networks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment file (INI)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=_seed, default=None, help="override [initial] seed")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run and write time series + summary")
    sub.add_parser("constants", parents=[common], help="print the theorem constants")
    sub.add_parser("sync-report", parents=[common], help="run and write the synchronization report")
    sub.add_parser("convergence", parents=[common], help="self-convergence order study")
    return ap


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line)


def _fmt(v) -> str:
    return "none" if v is None else f"{v:.12g}"


def _run(args, spec, out: Path, report_only: bool) -> int:
    prob = build_problem(spec)
    res = simulate(prob)
    doc = summary_document(res)
    write_timeseries(res.trajectory, out / spec.timeseries)
    dump_json(doc, out / spec.summary)
    if report_only:
        dump_json({"sync": doc["sync"], "status": doc["status"]}, out / "sync_report.json")
    if not res.ok:
        print(f"hrsync: diverged: {res.divergence}", file=sys.stderr)
        print(f"hrsync: partial outputs written to {out}", file=sys.stderr)
        return EXIT_DIVERGED
    ab = doc["absorbing"]
    _say(args, f"t_end = {spec.step.t_end:g}, samples = {res.trajectory.n_samples}",
         f"absorbing entry time = {_fmt(ab['entry_time'])} (T0 bound {_fmt(ab['t0_bound'])})",
         f"envelope violation = {_fmt(ab['max_envelope_violation'])}",
         f"energy inequality residual = {_fmt(doc['energy_inequality_residual'])}")
    sync = doc["sync"]
    if sync is not None:
        _say(args, f"deg_s estimate (tail {sync['tail_fraction']:g}) = {_fmt(sync['deg_s_estimate'])}")
        for i, (rate, r2) in enumerate(zip(sync["decay_rate"], sync["decay_r_squared"]), 1):
            _say(args, f"S_{i}: decay rate {_fmt(rate)} (R^2 {r2:.4f}), mu = {_fmt(sync['mu'])}, "
                       f"tau = {_fmt(sync['threshold_crossing_time'][i - 1])}, "
                       f"final margin {_fmt(sync['threshold_margin_final'][i - 1])}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_config(args.config)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "constants":
            rows = constants_table(build_problem(spec))
            width = max(len(k) for k, _ in rows)
            _say(args, *(f"{k:<{width}}  {v:.12g}" for k, v in rows))
            return EXIT_OK
        if args.command == "convergence":
            if spec.study is None:
                spec = replace(spec, study="temporal")
            res = convergence_study(spec)
            label = "dt" if res.study == "temporal" else "h"
            _say(args, f"{res.study} study, scheme {res.scheme}, reference {label} = {res.reference:.6g}",
                 f"{label:>12}  {'error':>12}  order")
            for h, e, o in res.as_rows():
                _say(args, f"{h:12.6g}  {e:12.6g}  {'-' if o is None else f'{o:.3f}'}")
            _say(args, f"fitted order = {res.fitted_order:.3f}")
            return EXIT_OK
        if args.command == "sync-report" and spec.m < 1:
            raise ConfigError("[partition] m: sync-report needs m >= 1")
        return _run(args, spec, out, args.command == "sync-report")
    except ConfigError as exc:
        print(f"hrsync: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, LinearSolveError) as exc:
        print(f"hrsync: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # mesh / partition constraints detected while building the problem
        print(f"hrsync: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
