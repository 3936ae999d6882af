"""Command-line entry point.

Exit status: 0 success, 1 invalid input or usage, 2 numerical convergence or
conditioning failure, 3 verification FAIL.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ConditioningError,
    ConvergenceError,
    Parameters,
    SeriesControl,
    ValidationError,
    format_real,
    validate,
    write_csv,
    write_events_csv,
    write_profile_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3
PRECISION_ENV = "ASTREE_PRECISION"


class _Parser(argparse.ArgumentParser):
    # usage errors share the validation exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --- argument helpers --------------------------------------------------------


def int_range(text: str) -> list[int]:
    """``A..B`` inclusive, or a comma list of integers."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"bad integer range {text!r}; use A..B or a,b,c") from None


def real_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"bad list of reals {text!r}") from None


def pair_list(text: str) -> list[tuple[int, int]]:
    try:
        out = []
        for item in text.split(","):
            a, b = item.split(":")
            out.append((int(a), int(b)))
        return out
    except ValueError:
        raise ValidationError(f"bad pair list {text!r}; use n:n',n:n'") from None


def time_grid(args, name="--t") -> list[float]:
    if getattr(args, "times", None):
        ts = real_list(args.times)
    elif getattr(args, "grid", None):
        if args.tmin is None or args.tmax is None:
            raise ValidationError("--grid needs --tmin and --tmax")
        if args.log:
            if args.tmin <= 0:
                raise ValidationError("--log grid needs --tmin > 0")
            ts = np.geomspace(args.tmin, args.tmax, args.grid).tolist()
        else:
            ts = np.linspace(args.tmin, args.tmax, args.grid).tolist()
    else:
        raise ValidationError(f"give times with {name} t1,t2,... or --grid N --tmin A --tmax B")
    if not ts:
        raise ValidationError("empty time grid")
    return ts


def _add_grid(p, default_points=None, list_flag="--t"):
    p.add_argument(list_flag, dest="times", help="comma list of times")
    p.add_argument("--grid", type=int, default=default_points, help="number of grid points")
    p.add_argument("--tmin", type=float)
    p.add_argument("--tmax", type=float)
    p.add_argument("--log", action="store_true", help="log-spaced grid")


def control_from(args) -> SeriesControl:
    return SeriesControl(precision=args.precision, digits=args.digits)


def _config(args) -> dict:
    skip = {"func", "command_line"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def meta(args) -> dict:
    return {"version": __version__, "command": args.command_line,
            "config": json.dumps(_config(args), sort_keys=True, default=str)}


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def emit_table(args, header, rows, path=None, trailer=()):
    """Rows as CSV with a metadata header, or as JSON with ``--json``."""
    rows = [list(r) for r in rows]
    fh = _open_out(path if path is not None else args.out)
    try:
        if args.json:
            records = [dict(zip(header, (_jsonable(v) for v in r))) for r in rows]
            json.dump({"meta": meta(args), "rows": records}, fh, indent=2)
            fh.write("\n")
        else:
            write_csv(fh, header, rows, meta(args), trailer)
    finally:
        if fh is not sys.stdout:
            fh.close()


def emit_json(args, obj, path=None):
    fh = _open_out(path if path is not None else args.out)
    try:
        json.dump({**obj, "meta": meta(args)}, fh, indent=2, default=_jsonable)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


# --- analytic ---------------------------------------------------------------


def cmd_analytic_mean(args):
    from .moments import mean_occupancy

    ctl = control_from(args)
    rows = []
    for n in int_range(args.depths):
        y = mean_occupancy(n, args.t, args.c, ctl)
        rows.append((n, y, math.ldexp(y, n)))
    emit_table(args, ("depth", "y_n", "mean_count"), rows)


def cmd_analytic_cov(args):
    from .moments import profile_cov_exact

    value, digits = profile_cov_exact(args.n, args.nprime, args.t, args.c, control_from(args),
                                      report=True)
    emit_json(args, {"n": args.n, "nprime": args.nprime, "t": args.t, "c": args.c,
                     "cov_exact": value, "digits": digits})


def cmd_analytic_cov_asymptotic(args):
    from .moments import profile_cov_asymptotic, profile_cov_exact

    value, regime = profile_cov_asymptotic(args.i, args.iprime, args.n, args.t, args.c,
                                           control_from(args))
    out = {"i": args.i, "iprime": args.iprime, "n": args.n, "t": args.t, "c": args.c,
           "cov_asymptotic": value, "regime": regime.tag, "regime_constant": regime.prefactor,
           "scale": regime.scale_description}
    if args.with_exact:
        exact, digits = profile_cov_exact(args.n + args.i, args.n + args.iprime,
                                          args.t * args.c ** args.n, args.c, control_from(args),
                                          report=True)
        out.update(cov_exact=exact, ratio=exact / value if value else math.nan, digits=digits)
    emit_json(args, out)


def cmd_analytic_limit_profile(args):
    from .moments import limit_profile

    ctl = control_from(args)
    emit_table(args, ("i", "x_i"),
               ((i, limit_profile(i, args.t, args.c, ctl)) for i in int_range(args.i)))


def cmd_qtable(args):
    from .qseries import build_qtable

    table = build_qtable(args.c, SeriesControl(k_max=args.k_max))
    rows = [(k, a, b) for k, (a, b) in enumerate(zip(table.a, table.b))]
    emit_table(args, ("k", "a_k", "b_k"), rows, trailer=[f"# b_inf={format_real(table.b_inf)}"])


# --- simulation -------------------------------------------------------------


def _stop_rule(args):
    from .simulator import StopRule

    given = [x is not None for x in (args.stop_external, args.stop_time, args.stop_events)]
    if sum(given) + bool(args.stop_absorption) != 1:
        raise ValidationError("give exactly one of --stop-external, --stop-time, --stop-events, "
                              "--stop-absorption")
    return StopRule(args.stop_external, args.stop_time, args.stop_events, args.stop_absorption)


def write_tree_csv(path, tree, meta_):
    rows = sorted(((w.depth, w.bits) for w in tree))
    write_csv(path, ("depth", "path_bits"), rows, meta_)


def cmd_simulate(args):
    from .simulator import simulate_profile, simulate_tree

    params = validate(Parameters(args.c, args.r, args.h), "simulate")
    stop = _stop_rule(args)
    snaps = real_list(args.snapshots) if args.snapshots else ()
    if args.tree_out:
        tree, traj = simulate_tree(params, stop, args.seed, snaps)
    else:
        tree, traj = None, simulate_profile(params, stop, args.seed, snaps)
    m = meta(args)
    m["status"] = traj.status
    m["final_time"] = format_real(traj.final_time)
    out = args.out or "trajectory.csv"
    write_events_csv(out, traj, m)
    profile_out = args.profile_out or _sibling(out, ".profile.csv")
    write_profile_csv(profile_out, traj.final, m)
    if snaps:
        rows = [(t, n, x) for t, p in traj.snapshots for n, x in enumerate(p.counts)]
        write_csv(_sibling(out, ".snapshots.csv"), ("time", "depth", "count"), rows, m)
    if tree is not None:
        write_tree_csv(args.tree_out, tree, m)
    print(f"{traj.n_events} events, final time {traj.final_time:.6g}, "
          f"{traj.final.total} external vertices ({traj.status})", file=sys.stderr)


def _sibling(path, suffix):
    p = Path(path)
    return str(p.with_name(p.stem + suffix))


def cmd_senescence_simulate(args):
    from .simulator import sample_senescence

    params = validate(Parameters(args.c, args.r, args.h), "simulate")
    if params.h is None:
        raise ValidationError("--h is required")
    ts = sorted(time_grid(args))
    scale = params.c ** params.h if not args.model_time else 1.0
    Z = sample_senescence(params, [t * scale for t in ts], args.replicates, args.seed,
                          args.threads)
    rows = []
    for j in range(args.replicates):
        for k, t in enumerate(ts):
            zp, zs = int(Z[j, k, 0]), int(Z[j, k, 1])
            rows.append((j, t, t * scale, zp, zs, zp / (zp + zs)))
    emit_table(args, ("replicate", "t", "model_time", "zp", "zs", "L"), rows)


def cmd_senescence_limit_curve(args):
    from .senescence import limit_fraction

    if args.points < 1:
        raise ValidationError("--points must be positive")
    if args.log:
        ts = np.geomspace(args.tmin, args.tmax, args.points)
    else:
        ts = np.linspace(args.tmin, args.tmax, args.points)
    ctl = control_from(args)
    rows = []
    for t in ts.tolist():
        p = limit_fraction(t, args.c, args.r, ctl)
        rows.append((t, p.L, p.numerator, p.denominator))
    emit_table(args, ("t", "L", "numerator", "denominator"), rows)


# --- verification -----------------------------------------------------------


def _verdict_out(args, reports, ok, summary):
    emit_json(args, {"reports": [r.as_dict() for r in reports], "pass": ok, "summary": summary})
    print(summary, file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify_mean(args):
    from .montecarlo import battery_verdict, estimate_mean_profile

    reports = []
    for c in real_list(args.c):
        for t in real_list(args.t):
            reports += estimate_mean_profile(c, t, int_range(args.depths), args.replicates,
                                             args.seed, args.r, args.threads)
    ok, summary = battery_verdict(reports, args.z_max)
    return _verdict_out(args, reports, ok, summary)


def cmd_verify_cov(args):
    from .montecarlo import battery_verdict, estimate_covs

    reports = estimate_covs(args.c, args.t, pair_list(args.pairs), args.replicates, args.seed,
                            args.r, args.threads)
    ok, summary = battery_verdict(reports, args.z_max)
    return _verdict_out(args, reports, ok, summary)


def cmd_verify_senescence(args):
    from .montecarlo import deviation_verdict, estimate_L_curve

    reports = estimate_L_curve(args.c, args.r, args.h, time_grid(args), args.replicates,
                               args.seed, args.threads)
    ok, summary = deviation_verdict(reports, args.band)
    return _verdict_out(args, reports, ok, summary)


# --- fitting ----------------------------------------------------------------


def cmd_fit(args):
    from .fit import fit_c, ingest, model_curve

    obs = ingest(args.input)
    r = "free" if args.fit_r else args.r
    res = fit_c(obs, r=r, c_lo=args.c_lo, c_hi=args.c_hi, tol=args.tol, h=args.h)
    emit_json(args, res.as_dict())
    if args.curve_out:
        ts = sorted(o.t for o in obs)
        if len(ts) > 1:
            ts = np.geomspace(ts[0], ts[-1], 200).tolist()
        L = model_curve(ts, res.c_hat, res.r_hat, args.h)
        write_csv(args.curve_out, ("t", "L_fit"), zip(ts, L.tolist()), meta(args))


# --- figure recipes -----------------------------------------------------------


def cmd_repro_fig1(args):
    from .simulator import StopRule, simulate_tree

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in real_list(args.c):
        params = validate(Parameters(c), "simulate")
        tree, traj = simulate_tree(params, StopRule(target_external=args.external), args.seed)
        m = meta(args)
        m["c"] = format_real(c)
        stem = f"fig1_c{c:g}"
        write_tree_csv(out_dir / f"{stem}_tree.csv", tree, m)
        write_profile_csv(out_dir / f"{stem}_profile.csv", traj.final, m)
        print(f"c={c:g}: {len(tree)} external vertices, depths "
              f"{min(w.depth for w in tree)}..{max(w.depth for w in tree)}", file=sys.stderr)


def cmd_repro_fig3(args):
    from .montecarlo import estimate_L_curve
    from .senescence import limit_fraction

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = np.geomspace(args.tmin, args.tmax, args.points).tolist()
    for c in real_list(args.c):
        m = meta(args)
        m["c"] = format_real(c)
        reports = estimate_L_curve(c, 1.0, args.h, ts, args.replicates, args.seed, args.threads)
        write_csv(out_dir / f"fig3_sim_c{c:g}.csv", ("t", "L_mean", "L_se", "L_limit"),
                  ((t, r.estimate, r.std_error, r.exact) for t, r in zip(ts, reports)), m)
        curve = np.geomspace(args.tmin, args.tmax, 200).tolist()
        write_csv(out_dir / f"fig3_limit_c{c:g}.csv", ("t", "L"),
                  ((t, limit_fraction(t, c).L) for t in curve), m)
        worst = max(abs(r.deviation) for r in reports)
        print(f"c={c:g}: max |simulated - limit| = {worst:.4f}", file=sys.stderr)


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--precision", choices=("auto", "double", "extended"),
                        default=os.environ.get(PRECISION_ENV, "auto"),
                        help=f"series precision policy (default from ${PRECISION_ENV}, else auto)")
    common.add_argument("--digits", type=int, default=50, help="extended-precision digits")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--json", action="store_true", help="structured JSON output")
    common.add_argument("--out", default=None, help="output file (default stdout)")

    p = _Parser(prog="astree", description="Aldous-Shields tree simulator and moment engine")
    p.add_argument("--version", action="version", version=f"astree {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    an = sub.add_parser("analytic", help="closed-form moments").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = an.add_parser("mean", parents=[common], help="mean profile E X_n(t)")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--depths", required=True, help="A..B inclusive")
    q.set_defaults(func=cmd_analytic_mean)
    q = an.add_parser("cov", parents=[common], help="exact Cov[X_n, X_n']")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--nprime", type=int, required=True)
    q.set_defaults(func=cmd_analytic_cov)
    q = an.add_parser("cov-asymptotic", parents=[common], help="large-n covariance")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--i", type=int, default=0)
    q.add_argument("--iprime", type=int, default=0)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--with-exact", action="store_true", help="also evaluate the exact value")
    q.set_defaults(func=cmd_analytic_cov_asymptotic)
    q = an.add_parser("limit-profile", parents=[common], help="limit profile x_i(t)")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--i", default="-5..5", help="A..B inclusive; write --i=-2..2 for negatives")
    q.set_defaults(func=cmd_analytic_limit_profile)

    qt = sub.add_parser("qtable", help="q-series tables").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = qt.add_parser("dump", parents=[common], help="CSV of a_k, b_k")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--k-max", type=int, default=200)
    q.set_defaults(func=cmd_qtable)

    q = sub.add_parser("simulate", parents=[common], help="simulate one trajectory")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--h", type=int)
    q.add_argument("--stop-external", type=int)
    q.add_argument("--stop-time", type=float)
    q.add_argument("--stop-events", type=int)
    q.add_argument("--stop-absorption", action="store_true")
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--snapshots", help="comma list of snapshot times")
    q.add_argument("--profile-out", help="final profile CSV (default OUT.profile.csv)")
    q.add_argument("--tree-out", help="external-vertex CSV depth,path_bits")
    q.set_defaults(func=cmd_simulate)

    se = sub.add_parser("senescence", help="depth-capped model").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = se.add_parser("simulate", parents=[common], help="simulate Z^p, Z^s on a grid")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--h", type=int, required=True)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--replicates", type=int, default=1)
    q.add_argument("--model-time", action="store_true",
                   help="grid is raw model time instead of units of c^h")
    _add_grid(q)
    q.set_defaults(func=cmd_senescence_simulate)
    q = se.add_parser("limit-curve", parents=[common], help="limit curve L(t)")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--tmin", type=float, required=True)
    q.add_argument("--tmax", type=float, required=True)
    q.add_argument("--points", type=int, default=100)
    q.add_argument("--log", action="store_true")
    q.set_defaults(func=cmd_senescence_limit_curve)

    ve = sub.add_parser("verify", help="Monte Carlo against analytic values").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = ve.add_parser("mean", parents=[common], help="mean profile battery")
    q.add_argument("--c", default="1.3,2", help="comma list")
    q.add_argument("--t", default="1,3", help="comma list")
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--depths", default="0..8")
    q.add_argument("--replicates", type=int, default=10000)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--z-max", type=float, default=4.0)
    q.set_defaults(func=cmd_verify_mean)
    q = ve.add_parser("cov", parents=[common], help="covariance battery")
    q.add_argument("--c", type=float, default=2.0)
    q.add_argument("--t", type=float, default=2.0)
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--pairs", default="2:2,3:4,4:4")
    q.add_argument("--replicates", type=int, default=100000)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--z-max", type=float, default=5.0)
    q.set_defaults(func=cmd_verify_cov)
    q = ve.add_parser("senescence", parents=[common], help="L-curve against its limit")
    q.add_argument("--c", type=float, required=True)
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--h", type=int, default=20)
    q.add_argument("--replicates", type=int, default=50)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--band", type=float, default=0.05)
    _add_grid(q)
    q.set_defaults(func=cmd_verify_senescence)

    q = sub.add_parser("fit", parents=[common], help="estimate c from L data")
    q.add_argument("--input", required=True, help="CSV t,L[,weight]")
    q.add_argument("--fit-r", action="store_true", help="fit r as well")
    q.add_argument("--r", type=float, default=1.0)
    q.add_argument("--c-lo", type=float, default=1.05)
    q.add_argument("--c-hi", type=float, default=10.0)
    q.add_argument("--tol", type=float, default=1e-6, help="tolerance on log c")
    q.add_argument("--h", type=int, help="input times are raw model time; rescale by c^h")
    q.add_argument("--curve-out", help="CSV t,L_fit of the fitted curve")
    q.set_defaults(func=cmd_fit)

    rp = sub.add_parser("repro", help="figure recipes").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = rp.add_parser("fig1", parents=[common], help="trees at 500 external vertices")
    q.add_argument("--c", default="1.05,3", help="comma list")
    q.add_argument("--seed", type=int, default=7)
    q.add_argument("--external", type=int, default=500)
    q.add_argument("--out-dir", default=".")
    q.set_defaults(func=cmd_repro_fig1)
    q = rp.add_parser("fig3", parents=[common], help="simulated and limit L-curves")
    q.add_argument("--c", default="1.2,1.3,1.5", help="comma list")
    q.add_argument("--h", type=int, default=20)
    q.add_argument("--replicates", type=int, default=50)
    q.add_argument("--seed", type=int, default=3)
    q.add_argument("--tmin", type=float, default=0.05)
    q.add_argument("--tmax", type=float, default=10.0)
    q.add_argument("--points", type=int, default=40)
    q.add_argument("--out-dir", default=".")
    q.set_defaults(func=cmd_repro_fig3)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.command_line = shlex.join(["astree"] + argv)
    try:
        status = args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, ConditioningError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(main())
