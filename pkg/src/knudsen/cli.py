"""Command-line interface.

Subcommands: h, matrix, gap, diffusivity, sweep, trace-dump.
Exit codes: 0 ok, 1 config/parameter, 2 geometry, 3 numeric/reliability, 4 IO.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import diffusivity as dv
from .billiard import dump_trajectory_csv, trace_cell
from .errors import ConfigError, KnudsenError, ParameterError, StorageError
from .geometry import flatness_h, profile_from_dict, profile_from_json
from .operator import DEFAULT_M, DEFAULT_N, TransitionMatrix, spectral_summary
from .sweep import ExperimentConfig, cached_matrix, run_sweep

log = logging.getLogger("knudsen")

PROFILE_FLAGS = ("K", "alpha", "d", "K_big", "K_small", "w", "R")


def _add_profile_args(p):
    g = p.add_argument_group("profile")
    g.add_argument("--family", choices=["flat", "bumps", "mixture", "two-bumps", "bumps-with-wall"])
    g.add_argument("--profile-file", help="JSON profile description (family+params or pieces)")
    for name in PROFILE_FLAGS:
        g.add_argument(f"--{name}", type=float, dest=f"p_{name}")


def _profile(args):
    if args.profile_file:
        try:
            text = Path(args.profile_file).read_text()
        except OSError as exc:
            raise StorageError(f"cannot read {args.profile_file}: {exc}") from None
        return profile_from_json(text)
    if not args.family:
        raise ConfigError("give --family or --profile-file")
    params = {n: getattr(args, f"p_{n}") for n in PROFILE_FLAGS if getattr(args, f"p_{n}") is not None}
    return profile_from_dict({"family": args.family, **params})


def _matrix(args, profile=None):
    if getattr(args, "matrix", None):
        return TransitionMatrix.load(args.matrix)
    profile = profile or _profile(args)
    return cached_matrix(profile, args.M, args.N, args.mode, args.seed)


def _add_matrix_args(p, with_file=True):
    p.add_argument("--M", type=int, default=DEFAULT_M)
    p.add_argument("--N", type=int, default=DEFAULT_N)
    p.add_argument("--mode", choices=["grid", "random"], default="grid")
    p.add_argument("--seed", type=int, default=None)
    if with_file:
        p.add_argument("--matrix", help="load a saved matrix instead of building one")


def cmd_h(args, out):
    prof = _profile(args)
    res = flatness_h(prof)
    print(f"{res.h:.12g}", file=out)


def cmd_matrix(args, out):
    prof = _profile(args)
    from .operator import build_matrix
    P = build_matrix(prof, args.M, args.N, args.mode, args.seed, workers=args.workers)
    P.save(args.out)
    if args.svg:
        from .plotting import plot_matrix
        plot_matrix(P, args.svg)
    print(json.dumps(P.metadata(), sort_keys=True), file=out)


def cmd_gap(args, out):
    P = _matrix(args)
    s = spectral_summary(P)
    h = None
    if not args.matrix:
        h = flatness_h(_profile(args)).h
    row = dict(s.as_dict(), h=h, gap_asymptotic=None if h is None else dv.gap_asymptotic(h))
    print(json.dumps(row, sort_keys=True), file=out)


def cmd_diffusivity(args, out):
    f = dv.displacement_observable(args.cutoff, args.r_ch)
    prof = None if args.matrix else _profile(args)
    h = flatness_h(prof).h if prof is not None else None
    P = summary = None
    w = csv.DictWriter(out, dv.DiffusivityReport.CSV_COLUMNS)
    w.writeheader()
    family = prof.family if prof is not None else "matrix"
    params = ";".join(f"{k}={v:g}" for k, v in sorted(prof.params.items())) if prof is not None else ""
    failures = []
    for e in args.estimators:
        try:
            if e == "lser":
                if h is None:
                    raise ConfigError("lser needs a profile (for h), not a matrix file")
                rep = dv.lser_sigma2(f, h, args.n_lser)
            else:
                if P is None:
                    P = _matrix(args, prof)
                    summary = spectral_summary(P, vectors="spectral" in args.estimators)
                if e == "galerkin":
                    rep = dv.galerkin_sigma2(P, f, args.n_galerkin)
                elif e == "direct":
                    rep = dv.direct_sigma2(P, f, summary=summary)
                else:
                    rep = dv.spectral_sigma2(P, f, summary)
            rep.h = h
            if rep.gap is None and summary is not None:
                rep.gap = summary.gap
            w.writerow(rep.csv_row(family, params))
        except KnudsenError as exc:
            failures.append(exc)
            log.error("%s: %s", e, exc)
    if failures and len(failures) == len(args.estimators):
        raise failures[0]


def cmd_sweep(args, out):
    cfg = ExperimentConfig.from_ini(args.config)
    if args.workers:
        cfg.workers = args.workers
    if args.output:
        cfg.output = args.output
    res = run_sweep(cfg)
    res.write_csv(cfg.output)
    plot = args.plot or cfg.plot
    if plot is None:
        plot = str(Path(cfg.output).with_suffix(".svg"))
    if plot and cfg.param is not None:
        from .plotting import plot_sweep
        plot_sweep(res, cfg.param, plot, cfg.estimators)
    print(cfg.output, file=out)


def cmd_trace_dump(args, out):
    prof = _profile(args)
    traj = trace_cell(prof, args.r, args.x)
    dump_trajectory_csv(traj, args.out)
    print(json.dumps({"exit_r": traj.exit.r, "exit_x": traj.exit.x,
                      "collisions": traj.n_collisions, "wraps": traj.wraps}), file=out)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the config code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(ConfigError.exit_code)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="knudsen", description="Knudsen self-diffusivity of billiard walls")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("h", help="flatness parameter of a profile")
    _add_profile_args(p)
    p.set_defaults(func=cmd_h)

    p = sub.add_parser("matrix", help="build and save a transition matrix")
    _add_profile_args(p)
    _add_matrix_args(p, with_file=False)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="also render the matrix as an SVG heat map")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("gap", help="spectral gap of a profile or saved matrix")
    _add_profile_args(p)
    _add_matrix_args(p)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("diffusivity", help="sigma^2 and eta by one or more estimators")
    _add_profile_args(p)
    _add_matrix_args(p)
    p.add_argument("--estimators", type=lambda s: [e.strip() for e in s.split(",")],
                   default=["galerkin", "direct"])
    p.add_argument("--n-galerkin", type=int, default=dv.GALERKIN_N)
    p.add_argument("--n-lser", type=int, default=dv.LSER_N)
    p.add_argument("--cutoff", type=float, default=dv.DEFAULT_CUTOFF)
    p.add_argument("--r-ch", type=float, default=1.0)
    p.set_defaults(func=cmd_diffusivity)

    p = sub.add_parser("sweep", help="run a parameter sweep from an INI config")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--plot", help="SVG path (default: next to the CSV); empty string disables")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace-dump", help="trace one particle and dump its events as CSV")
    _add_profile_args(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace_dump)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else ConfigError.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "estimators", None):
        bad = set(args.estimators) - set(dv.ESTIMATORS)
        if bad:
            print(f"error: unknown estimators {sorted(bad)}", file=sys.stderr)
            return ConfigError.exit_code
    try:
        args.func(args, out)
    except KnudsenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ParameterError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
