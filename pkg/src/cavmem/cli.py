"""Command-line interface.

Subcommands: efficiency, sweep, control, crossover, asymptote, simulate, oct.
CSV outputs carry a ``#`` metadata header with the tool version and argument
vector; non-tabular results go to JSON (stdout or sidecar files).

Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy import optimize

from cavmem import __version__, asymptotics, control, dynamics, model, shapes
from cavmem import oct as octmod

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
STRATEGIES = ("ansatz", "two_tc", "c_leq_one", "oct", "asymptote")
CROSSOVER_B = {0.99: 0.549, round(2.0 / 3.0, 4): 0.128}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# --- shared helpers --------------------------------------------------------------

SHAPE_CHOICES = [k.value for k in shapes.ShapeKind if k is not shapes.ShapeKind.TABULATED] + ["csv"]


def _add_shape_args(p, required=True, multi=False):
    if multi:
        p.add_argument("--shape", help="comma list from " + ",".join(SHAPE_CHOICES))
    else:
        p.add_argument("--shape", required=required, choices=SHAPE_CHOICES)
    p.add_argument("--tau", type=float, default=1.0, help="characteristic time (default 1)")
    p.add_argument("--samples", help="CSV file with columns t, Re phi[, Im phi] (with --shape csv)")
    p.add_argument("--window", type=float, help="truncate to a window of this width (units of tau)")
    p.add_argument("--t1", type=float, help="explicit truncation start")
    p.add_argument("--t2", type=float, help="explicit truncation end")
    p.add_argument("--shift", action="store_true", help="shift the amplitude so that phi(t2) = 0")


def _add_rate_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--gamma-tau", type=float, help="limiting rate times tau")
    g.add_argument("--gamma-tc", type=float, help="limiting rate times the time variance")
    g.add_argument("--rate", type=float, help="limiting rate in inverse time units")


def build_shape(kind, tau=1.0, window=None, t1=None, t2=None, shift=False, samples=None):
    if kind == "csv":
        if not samples:
            raise UsageError("--shape csv needs --samples")
        sh = shapes.from_csv(samples)
    else:
        sh = shapes.make_shape(kind, tau)
    if window is not None:
        a, b = shapes.centered_window(sh, window * sh.tau)
        sh = shapes.truncate(sh, a, b, shift=shift)
    elif t1 is not None or t2 is not None or shift:
        a = sh.t1 if t1 is None else t1
        b = sh.t2 if t2 is None else t2
        sh = shapes.truncate(sh, a, b, shift=shift)
    return sh


def _shape_from_args(a):
    return build_shape(a.shape, a.tau, a.window, a.t1, a.t2, a.shift, a.samples)


def resolve_rate(shape, gamma_tau=None, gamma_tc=None, rate=None):
    if rate is not None:
        r = rate
    elif gamma_tau is not None:
        r = gamma_tau / shape.tau
    else:
        r = gamma_tc / shapes.time_variance(shape)
    if not r > 0:
        raise UsageError("the rate must be positive")
    return r


def _jobs_default():
    try:
        return max(1, int(os.environ.get("CAVMEM_JOBS", "1")))
    except ValueError:
        return 1


def write_csv(path, header, rows, argv, note=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# cavmem {__version__}\n")
        fh.write("# argv: " + " ".join(argv) + "\n")
        if note:
            fh.write(f"# {note}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _r(x):
    return repr(float(x))


def _fmt_times(ts):
    return ";".join(repr(float(t)) for t in ts)


def _emit(obj):
    print(json.dumps(obj, indent=2, default=float))


# --- strategy evaluation (module level so worker processes can import it) --------

def evaluate_point(shape_kw, rate, strategy, oct_kw=None):
    """One sweep cell: returns (eta, c, critical_times, note)."""
    sh = build_shape(**shape_kw)
    if strategy == "ansatz":
        r = control.optimize_c(sh, rate)
        return r.eta, r.c, r.map.critical_times, "degenerate" if r.degenerate else ""
    if strategy == "two_tc":
        r = control.two_tc_map(sh, rate)
        return r.eta, r.c, r.map.critical_times, "fallback" if r.map.fallback else ""
    if strategy == "c_leq_one":
        c, eta = control.c_leq_one_eta(sh, rate)
        return eta, c, (), ""
    if strategy == "asymptote":
        if sh.untruncated:
            res = asymptotics.table1_inefficiency(sh.kind, rate, sh.tau)
        else:
            n, alpha = shapes.taylor_endpoint(sh)
            res = asymptotics.truncation_result(n, alpha, rate, sh.tau)
        return res.eta, float("nan"), (), res.regime.value
    if strategy == "oct":
        kw = dict(oct_kw or {})
        p = model.MemoryParams.for_rate(rate)
        r = octmod.oct_optimize(sh, p, **kw)
        return r.eta, float("nan"), (), "converged" if r.converged else "maxiter"
    raise UsageError(f"unknown strategy {strategy!r}")


def _eval_star(args):
    return evaluate_point(*args)


# --- subcommands --------------------------------------------------------------------

def cmd_efficiency(a, argv):
    sh = _shape_from_args(a)
    rate = resolve_rate(sh, a.gamma_tau, a.gamma_tc, a.rate)
    if a.strategy == "ansatz":
        r = control.optimize_c(sh, rate)
        out = dict(c=r.c, t_c=list(r.map.critical_times), eta=r.eta, iterations=r.iterations,
                   degenerate=r.degenerate)
    elif a.strategy == "two_tc":
        r = control.two_tc_map(sh, rate)
        out = dict(c=r.c, t_c=list(r.map.critical_times), eta=r.eta, iterations=r.iterations,
                   fallback=r.map.fallback)
    else:
        c, eta = control.c_leq_one_eta(sh, rate)
        out = dict(c=c, t_c=[], eta=eta)
    out.update(rate=rate, strategy=a.strategy)
    _emit(out)
    return 0


def _axis(a):
    if a.num < 1:
        raise UsageError("the axis needs at least one point")
    if a.log:
        if not (a.start > 0 and a.stop > 0):
            raise UsageError("log axes need positive bounds")
        return np.geomspace(a.start, a.stop, a.num)
    return np.linspace(a.start, a.stop, a.num)


SWEEP_DEFAULTS = dict(axis="gamma-tc", start=0.1, stop=10.0, num=20, strategies="ansatz")


def _load_spec(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise OSError(f"cannot read spec {path}: {e}") from e


def cmd_sweep(a, argv):
    if a.spec:
        spec = _load_spec(a.spec)
        for k, v in spec.items():
            k = k.replace("-", "_")
            if getattr(a, k, None) in (None, False):
                setattr(a, k, v)
    for k, v in SWEEP_DEFAULTS.items():
        if getattr(a, k, None) is None:
            setattr(a, k, v)
    if not a.shape:
        raise UsageError("--shape (or a spec file) is required")
    strategies = a.strategies if isinstance(a.strategies, list) else \
        [s for s in str(a.strategies or "").split(",") if s]
    if not strategies:
        raise UsageError("the strategy set is empty")
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategies: {', '.join(bad)}")
    kinds = a.shape if isinstance(a.shape, list) else [k for k in a.shape.split(",") if k]
    bad = [k for k in kinds if k not in SHAPE_CHOICES]
    if bad:
        raise UsageError(f"unknown shapes: {', '.join(bad)}")
    xs = _axis(a)
    tasks, keys = [], []
    for kind in kinds:
        kw = dict(kind=kind, tau=a.tau, window=a.window, t1=a.t1, t2=a.t2, shift=a.shift,
                  samples=a.samples)
        sh = build_shape(**kw)
        Tc = shapes.time_variance(sh) if a.axis == "gamma-tc" else None
        for x in xs:
            rate = x / Tc if Tc is not None else x / sh.tau
            for s in strategies:
                tasks.append((kw, rate, s, dict(n=a.oct_knots)))
                keys.append((kind, float(x), rate, s))
    # open the output first so an unwritable path fails before any work
    try:
        open(a.out, "a", encoding="utf-8").close()
    except OSError as e:
        print(f"error: cannot write {a.out}: {e}", file=sys.stderr)
        return EXIT_IO
    jobs = a.jobs or _jobs_default()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_eval_star, tasks))
    else:
        results = [_eval_star(t) for t in tasks]
    rows = []
    for (kind, x, rate, s), (eta, c, tcs, note) in zip(keys, results):
        rows.append([kind, a.axis, _r(x), _r(rate), s, _r(eta), _r(1.0 - eta), _r(c),
                     _fmt_times(tcs), note])
    write_csv(a.out, ["shape", "axis", "x", "rate", "strategy", "eta", "one_minus_eta", "c",
                      "t_c", "note"], rows, argv)
    return 0


def cmd_control(a, argv):
    sh = _shape_from_args(a)
    rate = resolve_rate(sh, a.gamma_tau, a.gamma_tc, a.rate)
    res = control.two_tc_map(sh, rate) if a.two_tc else control.optimize_c(sh, rate)
    if a.regime == "atom":
        drive = control.synthesize_omega_atom(res.map, delta=a.delta, Gamma=rate)
    else:
        if a.params:
            p = model.read_params(a.params)
            if abs(p.kappa - rate) > 1e-9 * rate:
                raise UsageError(f"cavity regime: rate {rate} differs from kappa {p.kappa} in the params file")
        else:
            p = model.MemoryParams(g_sqrtN=a.g_sqrtN or 10.0 * rate, kappa_in=rate, delta=a.delta)
        drive = control.synthesize_omega_cavity(res.map, p, M=a.M)
    control.write_drive(drive, a.out + ".csv", a.out + ".json", argv)
    _emit(dict(eta=res.eta, c=res.c, t_c=list(res.map.critical_times),
               impulses=len(drive.impulses), post_tc_mode=drive.post_tc_mode.value,
               csv=a.out + ".csv", json=a.out + ".json"))
    return 0


_SECH_TC = None


def sech_eta_vs_gamma_tc(x):
    """Pipeline efficiency of the untruncated sech at ``Gamma * T_c = x``."""
    global _SECH_TC
    if _SECH_TC is None:
        _SECH_TC = shapes.time_variance(shapes.sech())
    return control.optimize_c(shapes.sech(), x / _SECH_TC).eta


def crossover_b(target):
    """``Gamma * T_c`` at which the sech pipeline reaches ``target`` efficiency."""
    if not 0.0 < target < 1.0:
        raise UsageError("target efficiency must lie in (0, 1)")
    global _SECH_TC
    if _SECH_TC is None:
        _SECH_TC = shapes.time_variance(shapes.sech())
    hi = 2.0 * _SECH_TC  # threshold
    lo = 1e-3
    f = lambda x: sech_eta_vs_gamma_tc(x) - target
    if f(lo) > 0:
        raise ArithmeticError("target efficiency below the resolvable range")
    return optimize.brentq(f, lo, hi * (1 - 1e-9), xtol=1e-10)


def cmd_crossover(a, argv):
    p = model.read_params(a.params)
    key = round(a.target, 4)
    b = CROSSOVER_B.get(key)
    note = "b from tabulated constant"
    if b is None or a.invert:
        b = crossover_b(a.target)
        note = "b from inverting the sech efficiency curve"
    if a.g_min <= 0 or a.g_max <= a.g_min or a.num < 2:
        raise UsageError("need 0 < g-min < g-max and num >= 2")
    gs = np.geomspace(a.g_min, a.g_max, a.num)
    kappa = p.kappa
    rows = []
    for g in gs:
        Gamma = g * g / p.kappa_in
        t_atom, t_cav = b / Gamma, b / kappa
        regime = "atom-limited" if Gamma < kappa else "cavity-limited"
        rows.append([_r(g), _r(Gamma), _r(kappa), _r(t_atom), _r(t_cav), _r(max(t_atom, t_cav)), regime])
    write_csv(a.out, ["g_sqrtN", "Gamma", "kappa", "tc_atom_limited", "tc_cavity_limited",
                      "tc_min", "regime"], rows, argv, note=f"target={a.target} b={b!r} ({note})")
    return 0


def cmd_asymptote(a, argv):
    if a.beta is not None:
        _emit(dict(n=a.beta, beta=asymptotics.beta(a.beta)))
        return 0
    if not a.shape:
        raise UsageError("--shape is required unless --beta is given")
    sh = _shape_from_args(a)
    rate = resolve_rate(sh, a.gamma_tau, a.gamma_tc, a.rate)
    if sh.untruncated:
        r = asymptotics.table1_inefficiency(sh.kind, rate, sh.tau)
        out = dict(eta=r.eta, one_minus_eta=1.0 - r.eta, regime=r.regime.value, note=r.validity_note,
                   threshold=asymptotics.threshold_time(sh.kind))
    else:
        n, alpha = shapes.taylor_endpoint(sh)
        r = asymptotics.truncation_result(n, alpha, rate, sh.tau)
        tc = asymptotics.truncation_tc(n, alpha, rate, sh.tau, r.eta, sh.t2)
        out = dict(eta=r.eta, one_minus_eta=1.0 - r.eta, regime=r.regime.value, note=r.validity_note,
                   n=n, alpha=alpha, t_c=tc)
    out["rate"] = rate
    _emit(out)
    return 0


def cmd_simulate(a, argv):
    drive = control.read_drive(a.drive + ".csv", a.drive + ".json")
    p = model.read_params(a.params)
    tier = dynamics.Tier(a.tier)
    out = {}
    if a.storage:
        if not a.shape:
            raise UsageError("--storage needs --shape")
        sh = _shape_from_args(a)
        phi_s = dynamics.mirrored_input(sh, drive.t1, drive.t2)
        if not a.no_reverse:
            drive = dynamics.time_reverse_drive(drive)
        traj, eta = dynamics.simulate_storage(drive, phi_s, p, tier)
        out["eta_s"] = eta
    else:
        traj = dynamics.simulate_retrieval(drive, p, tier, S_init=a.s_init)
        if a.shape:
            out["eta_r"] = dynamics.overlap_efficiency(traj, _shape_from_args(a))
        out["emitted"] = float(traj.emitted[-1])
        out["loss_probability"] = dynamics.loss_probability(traj)
    out["max_residual"] = float(np.max(np.abs(traj.conservation_residual())))
    if a.out:
        traj.write_csv(a.out, argv)
        out["csv"] = a.out
    _emit(out)
    return 0


def cmd_oct(a, argv):
    if a.scenarios:
        cases = octmod.load_scenarios(a.scenarios)
    else:
        if not a.shape:
            raise UsageError("--shape or --scenarios is required")
        cases = [dict(shape=a.shape, tau=a.tau, window=a.window, gamma_tc=a.gamma_tc,
                      gamma_tau=a.gamma_tau, rate=a.rate, n=a.n, spacing=a.spacing,
                      interpolation=a.interp)]
    rows = []
    for case in cases:
        sh = build_shape(case["shape"], case.get("tau", 1.0), case.get("window"))
        rate = resolve_rate(sh, case.get("gamma_tau"), case.get("gamma_tc"), case.get("rate"))
        p = model.MemoryParams.for_rate(rate)
        r = octmod.oct_optimize(sh, p, n=case.get("n", octmod.DEFAULT_KNOTS),
                                spacing=case.get("spacing", "uniform"),
                                interpolation=case.get("interpolation", "cubic"),
                                gradient=a.gradient, restarts=a.restarts, seed=a.seed)
        ansatz = control.optimize_c(sh, rate).eta
        rows.append([case["shape"], _r(rate), str(case.get("n", octmod.DEFAULT_KNOTS)),
                     case.get("spacing", "uniform"), case.get("interpolation", "cubic"),
                     _r(r.eta), _r(r.eta_discrete), _r(ansatz), str(r.iterations),
                     str(r.converged)])
        if a.knots_out and len(cases) == 1:
            write_csv(a.knots_out, ["t", "re_omega", "im_omega"],
                      [[_r(t), _r(v.real), _r(v.imag)] for t, v in zip(r.grid.knots, r.grid.values)],
                      argv)
    header = ["shape", "rate", "n", "spacing", "interpolation", "eta", "eta_discrete", "eta_ansatz",
              "iterations", "converged"]
    if a.out:
        new = not os.path.exists(a.out)
        with open(a.out, "a", newline="", encoding="utf-8") as fh:
            if new:
                fh.write(f"# cavmem {__version__}\n# argv: {' '.join(argv)}\n")
                csv.writer(fh).writerow(header)
            csv.writer(fh).writerows(rows)
    _emit([dict(zip(header, r)) for r in rows])
    return 0


# --- parser ---------------------------------------------------------------------------

def build_parser():
    ap = _Parser(prog="cavmem", description="Optimal retrieval maps and controls for cavity quantum memories.")
    ap.add_argument("--version", action="version", version=f"cavmem {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("efficiency", help="efficiency of one shape at one rate")
    _add_shape_args(p)
    _add_rate_args(p)
    p.add_argument("--strategy", choices=["ansatz", "two_tc", "c_leq_one"], default="ansatz")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("sweep", help="efficiency sweep over a rate axis")
    _add_shape_args(p, multi=True)
    p.add_argument("--spec", help="JSON file with sweep settings (flags override it)")
    p.add_argument("--axis", choices=["gamma-tc", "gamma-tau"], help="default gamma-tc")
    p.add_argument("--start", type=float, help=f"default {SWEEP_DEFAULTS['start']}")
    p.add_argument("--stop", type=float, help=f"default {SWEEP_DEFAULTS['stop']}")
    p.add_argument("--num", type=int, help=f"default {SWEEP_DEFAULTS['num']}")
    p.add_argument("--log", action="store_true")
    p.add_argument("--strategies", help="comma list from " + ",".join(STRATEGIES) + " (default ansatz)")
    p.add_argument("--oct-knots", type=int, default=octmod.DEFAULT_KNOTS)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default $CAVMEM_JOBS or 1)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("control", help="synthesize the control field")
    _add_shape_args(p)
    _add_rate_args(p)
    p.add_argument("--regime", choices=["atom", "cavity"], default="atom")
    p.add_argument("--params", help="params file (cavity regime)")
    p.add_argument("--g-sqrtN", dest="g_sqrtN", type=float, help="collective coupling (cavity regime)")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--M", type=float, default=control.DECOUPLE_M, help="decoupling magnitude in units of g*sqrt(N)")
    p.add_argument("--two-tc", action="store_true")
    p.add_argument("--out", required=True, help="output prefix (writes .csv and .json)")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("crossover", help="minimal pulse duration versus coupling")
    p.add_argument("--params", required=True)
    p.add_argument("--target", type=float, default=0.99)
    p.add_argument("--invert", action="store_true", help="always compute b from the sech curve")
    p.add_argument("--g-min", type=float, default=0.1)
    p.add_argument("--g-max", type=float, default=100.0)
    p.add_argument("--num", type=int, default=31)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("asymptote", help="closed-form asymptotic efficiency")
    _add_shape_args(p, required=False)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma-tau", type=float)
    g.add_argument("--gamma-tc", type=float)
    g.add_argument("--rate", type=float)
    p.add_argument("--beta", type=int, help="print the truncation coefficient for this n")
    p.set_defaults(func=cmd_asymptote)

    p = sub.add_parser("simulate", help="simulate a stored drive")
    _add_shape_args(p, required=False)
    p.add_argument("--drive", required=True, help="drive prefix (reads .csv and .json)")
    p.add_argument("--params", required=True)
    p.add_argument("--tier", choices=[t.value for t in dynamics.Tier], default="atom-lossless")
    p.add_argument("--storage", action="store_true",
                   help="store the time-reversed shape with the time-reversed drive")
    p.add_argument("--no-reverse", action="store_true", help="use the drive file as a storage drive unchanged")
    p.add_argument("--s-init", type=complex, default=1.0)
    p.add_argument("--out", help="trajectory CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oct", help="numerical optimal-control baseline")
    _add_shape_args(p, required=False)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma-tau", type=float)
    g.add_argument("--gamma-tc", type=float)
    g.add_argument("--rate", type=float)
    p.add_argument("--scenarios", help="JSON scenario file")
    p.add_argument("--n", type=int, default=octmod.DEFAULT_KNOTS)
    p.add_argument("--spacing", choices=[s.value for s in octmod.Spacing], default="uniform")
    p.add_argument("--interp", choices=[s.value for s in octmod.Interpolation], default="cubic")
    p.add_argument("--gradient", choices=["adjoint", "fd"], default="adjoint")
    p.add_argument("--restarts", type=int, default=octmod.RESTARTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="scoreboard CSV (appended)")
    p.add_argument("--knots-out", help="CSV of optimized knot values")
    p.set_defaults(func=cmd_oct)
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    full = ["cavmem"] + argv
    try:
        return args.func(args, full)
    except (UsageError, NotImplementedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, control.ConstraintViolation, RuntimeError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
