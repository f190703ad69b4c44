"""Acceptance suite: twelve end-to-end criteria at their stated tolerances.

Each test prints one ``[acceptance] N ...: PASS|FAIL`` line.
"""
import csv
import math
import time

import numpy as np
import pytest

from cavmem import asymptotics, cli, control, dynamics, model, oct as octmod, shapes
from conftest import RANDOM_FAMILIES, random_drive, window_sech

WINDOW = math.sqrt(3.0) * math.pi


def _windowed(kind, width=WINDOW):
    base = shapes.make_shape(kind)
    return shapes.truncate(base, *shapes.centered_window(base, width))


def _sim_eta(drive, params, tier, target):
    return dynamics.overlap_efficiency(dynamics.simulate_retrieval(drive, params, tier), target)


def test_01_dec_exp_closed_form(report):
    t0 = time.perf_counter()
    sh = shapes.decreasing_exp()
    errs = [abs(control.optimize_c(sh, x).eta - 8 * x / (2 * x + 1) ** 2) for x in (0.1, 0.25, 0.4)]
    errs_unit = [abs(control.optimize_c(sh, x).eta - 1.0) for x in (0.5, 1.0, 5.0)]
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-6 and max(errs_unit) < 1e-8 and dt < 1.0
    report("1 dec-exp closed form", ok,
           f"max err {max(errs):.2e} (below), {max(errs_unit):.2e} (unit), {dt:.2f} s")


def test_02_inc_exp_exact(report):
    t0 = time.perf_counter()
    sh = shapes.increasing_exp()
    xs = np.geomspace(0.6, 20.0, 30)
    err = max(abs(control.optimize_c(sh, x).eta - asymptotics.inc_exp_eta(x, 1.0)) for x in xs)
    dt = time.perf_counter() - t0
    report("2 inc-exp exactness", err < 1e-8 and dt < 10.0, f"max err {err:.2e}, {dt:.2f} s")


def test_03_thresholds(report):
    bad = []
    cases = [("sech", 2.0, (2.0, 2.5, 5.0, 10.0), (0.5, 1.0, 1.9, 1.99)),
             ("lorentzian", 23.0 / 25.0, (0.92, 1.0, 2.0, 5.0), (0.3, 0.6, 0.9, 0.915, 0.9197))]
    for kind, Ta, above, below in cases:
        sh = shapes.make_shape(kind)
        for x in above:
            eta = control.optimize_c(sh, x).eta
            if abs(eta - 1.0) > 1e-8:
                bad.append(f"{kind} {x}: eta={eta:.12f} (want 1)")
        for x in below:
            eta = control.optimize_c(sh, x).eta
            if not eta < 1.0:
                bad.append(f"{kind} {x}: eta={eta!r} (want < 1)")
    report("3 thresholds", not bad, "; ".join(bad) or "all cases as expected")


def test_04_truncation_beta(report):
    exact = asymptotics.beta(0) == math.log(2.0) - 0.5
    sh = _windowed("sech")
    Tc = shapes.time_variance(sh)
    n, alpha = shapes.taylor_endpoint(sh)
    rel = {}
    for x in (3.0, 6.0, 12.0, 24.0):
        g = x / Tc
        loss = 1.0 - control.optimize_c(sh, g).eta
        pred = asymptotics.truncation_inefficiency(n, alpha, g, sh.tau)
        rel[x] = abs(loss - pred) / loss
    mono = all(rel[a] > rel[b] for a, b in zip((3.0, 6.0, 12.0), (6.0, 12.0, 24.0)))
    ok = exact and n == 0 and rel[3.0] < 0.10 and rel[6.0] < 0.03 and mono
    detail = ", ".join(f"rel err {v:.3f} at {k:g}" for k, v in rel.items())
    report("4 truncation coefficient", ok, f"beta(0) exact={exact}, n={n}, {detail}, monotone={mono}")


def test_05_time_reversal(report):
    rng = np.random.default_rng(2024)
    sh = window_sech()
    worst = 0.0
    for k in range(20):
        tier, params, target = RANDOM_FAMILIES[k % len(RANDOM_FAMILIES)]
        d = random_drive(rng, sh.t1, sh.t2, target)
        eta_r = _sim_eta(d, params, tier, sh)
        phi_s = dynamics.mirrored_input(sh, sh.t1, sh.t2)
        _, eta_s = dynamics.simulate_storage(dynamics.time_reverse_drive(d), phi_s, params, tier)
        worst = max(worst, abs(eta_s - eta_r))
    report("5 time-reversal symmetry", worst < 1e-8, f"max |eta_s - eta_r| = {worst:.2e} over 20 drives")


def test_06_conservation(report):
    rng = np.random.default_rng(7)
    sh = window_sech()
    trajs = []
    m = control.optimize_c(shapes.sech(), 0.6).map
    trajs.append(dynamics.simulate_retrieval(control.synthesize_omega_atom(m, Gamma=0.6),
                                             model.MemoryParams.for_rate(0.6), dynamics.Tier.ATOM_LOSSLESS))
    pc = model.MemoryParams(g_sqrtN=6.0, kappa_in=0.6)
    trajs.append(dynamics.simulate_retrieval(control.synthesize_omega_cavity(m, pc), pc, dynamics.Tier.CAVITY))
    pf = model.MemoryParams.for_rate(0.6, kappa_in=20.0)
    trajs.append(dynamics.simulate_retrieval(control.synthesize_omega_atom(m, Gamma=0.6), pf, dynamics.Tier.FULL))
    for tier, params, target in RANDOM_FAMILIES:
        trajs.append(dynamics.simulate_retrieval(random_drive(rng, sh.t1, sh.t2, target), params, tier))
    worst = max(float(np.max(np.abs(t.conservation_residual()))) for t in trajs)
    report("6 conservation", worst < 1e-8, f"max residual {worst:.2e} over {len(trajs)} trajectories")


def test_07_loss_factorization(report):
    sh = shapes.sech()
    Geff = 1.0
    d = control.synthesize_omega_atom(control.optimize_c(sh, Geff).map, Gamma=Geff)
    eta0 = _sim_eta(d, model.MemoryParams.for_rate(Geff), dynamics.Tier.ATOM_LOSSLESS, sh)
    worst = 0.0
    for C in (1.0, 10.0):
        for ratio in (0.0, 1.0):
            kin = 100.0
            kappa = kin * (1.0 + ratio)
            gamma = Geff / (1.0 + C)  # keeps gamma (1 + C) equal to the lossless rate
            p = model.MemoryParams(g_sqrtN=math.sqrt(C * kappa * gamma), kappa_in=kin,
                                   kappa_loss=ratio * kin, gamma=gamma)
            eta = _sim_eta(d, p, dynamics.Tier.ATOM, sh)
            worst = max(worst, abs(eta - C / (1 + C) * kin / kappa * eta0))
    report("7 loss factorization", worst < 1e-6, f"max deviation {worst:.2e}")


def test_08_stationarity_superiority(report):
    bad = []
    for kind in ("sech", "gaussian", "lorentzian"):
        sh = shapes.make_shape(kind)
        for x in (0.3, 0.6, 1.2):
            r = control.optimize_c(sh, x)
            for f in (0.99, 1.01):
                e = control.eta_at(sh, x, r.c * f)
                if e > r.eta:
                    bad.append(f"{kind} {x} c*{f}: {e} > {r.eta}")
            _, e1 = control.c_leq_one_eta(sh, x)
            if e1 > r.eta:
                bad.append(f"{kind} {x}: c<=1 {e1} > {r.eta}")
            if kind == "lorentzian":
                e2 = control.two_tc_map(sh, x).eta
                if e2 < r.eta:
                    bad.append(f"lorentzian {x}: two t_c {e2} < {r.eta}")
    report("8 stationarity and superiority", not bad, "; ".join(bad) or "27 cases")


def test_09_adiabatic_gap(report):
    sh = shapes.sech()
    Gt = 0.6
    d = control.synthesize_omega_atom(control.optimize_c(sh, Gt).map, Gamma=Gt)
    gaps = {}
    for kt in (10.0, 100.0):
        p = model.MemoryParams.for_rate(Gt, kappa_in=kt)
        gaps[kt] = dynamics.adiabatic_validity(d, p, dynamics.Tier.ATOM_LOSSLESS, sh)["gap"]
    ratio = gaps[10.0] / gaps[100.0]
    ok = gaps[100.0] < 0.02 and 5.0 <= ratio <= 20.0
    report("9 adiabatic-elimination gap", ok,
           f"gap {gaps[10.0]:.2e} at 10, {gaps[100.0]:.2e} at 100, ratio {ratio:.2f}")


@pytest.mark.slow
def test_10_oct_parity(report):
    t0 = time.perf_counter()
    lines, ok = [], True
    for kind in ("sech", "gaussian", "lorentzian", "dec-exp"):
        sh = _windowed(kind)
        g = 1.2 / shapes.time_variance(sh)
        ans = control.optimize_c(sh, g).eta
        eta = octmod.oct_optimize(sh, model.MemoryParams.for_rate(g)).eta
        good = ans - 0.02 <= eta <= ans + 1e-3
        ok &= good
        lines.append(f"{kind} oct {eta:.6f} ansatz {ans:.6f}")
    sh = _windowed("dec-exp", 2 * WINDOW)
    g = 1.2 / shapes.time_variance(sh)
    p = model.MemoryParams.for_rate(g)
    uni = octmod.oct_optimize(sh, p, n=150, spacing="uniform", interpolation="linear").eta
    dense = octmod.oct_optimize(sh, p, n=150, spacing="dense-at-end", interpolation="linear").eta
    dt = time.perf_counter() - t0
    ok = ok and dense > uni and dt < 600.0
    lines.append(f"dec-exp n=150 uniform {uni:.6f} dense-at-end {dense:.6f}")
    report("10 OCT parity", ok, "; ".join(lines) + f"; {dt:.0f} s")


def test_11_crossover(report, tmp_path):
    pf = tmp_path / "p.txt"
    model.write_params(model.MemoryParams(g_sqrtN=1.0, kappa_in=1.0), pf)
    out = tmp_path / "x.csv"
    rc = cli.main(["crossover", "--params", str(pf), "--g-min", "0.01", "--g-max", "100",
                   "--num", "41", "--out", str(out)])
    with open(out) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    g = np.array([float(r["g_sqrtN"]) for r in rows])
    Gam = np.array([float(r["Gamma"]) for r in rows])
    kap = np.array([float(r["kappa"]) for r in rows])
    tmin = np.array([float(r["tc_min"]) for r in rows])
    a = Gam < 0.5 * kap
    c = Gam > 2.0 * kap
    s_atom = np.polyfit(np.log(g[a]), np.log(tmin[a]), 1)[0]
    s_cav = np.polyfit(np.log(g[c]), np.log(tmin[c]), 1)[0]
    ta = np.array([float(r["tc_atom_limited"]) for r in rows])
    tcv = np.array([float(r["tc_cavity_limited"]) for r in rows])
    # crossing of the two branch lines, located in log g
    lg = np.interp(0.0, np.log(ta / tcv)[::-1], np.log(g)[::-1])
    cross_ratio = math.exp(2 * lg) / kap[0]  # Gamma / kappa at the crossing (kappa_in = 1)
    ok = rc == 0 and abs(s_atom + 2) < 0.02 and abs(s_cav) < 0.02 and abs(cross_ratio - 1) < 1e-6
    report("11 crossover", ok, f"slopes {s_atom:.4f} / {s_cav:.4f}, Gamma/kappa at crossing {cross_ratio:.6f}")


def test_12_cavity_equivalence(report):
    sh = shapes.sech()
    worst, ratios = 0.0, []
    for x in np.geomspace(0.3, 5.0, 8):
        res = control.optimize_c(sh, x)
        ea = _sim_eta(control.synthesize_omega_atom(res.map, Gamma=x), model.MemoryParams.for_rate(x),
                      dynamics.Tier.ATOM_LOSSLESS, sh)
        G = 10.0 * x  # G^2/kappa = 100 kappa: deep in the cavity-limited regime
        pc = model.MemoryParams(g_sqrtN=G, kappa_in=x)
        ec = _sim_eta(control.synthesize_omega_cavity(res.map, pc), pc, dynamics.Tier.CAVITY, sh)
        worst = max(worst, abs(ea - ec))
        if x >= 1.0:
            C = 100.0
            pl = model.MemoryParams(g_sqrtN=G, kappa_in=x, gamma=G * G / (x * C))
            tr = dynamics.simulate_retrieval(control.synthesize_omega_cavity(res.map, pl), pl,
                                             dynamics.Tier.CAVITY)
            ratios.append(dynamics.loss_probability(tr) * C)
    ok = worst < 1e-3 and all(1 / 3 <= r <= 3 for r in ratios)
    report("12 cavity-limited equivalence", ok,
           f"max |eta_atom - eta_cavity| {worst:.2e}; P_gamma*C in [{min(ratios):.2f}, {max(ratios):.2f}]")
