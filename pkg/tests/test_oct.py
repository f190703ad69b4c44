import json
import math

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from cavmem import control, dynamics, model, oct as octmod, shapes

WINDOW = math.sqrt(3) * math.pi


def _sech():
    return shapes.truncate(shapes.sech(), -WINDOW / 2, WINDOW / 2)


def test_uniform_and_dense_knots():
    k = octmod.make_knots(0.0, 1.0, 11)
    assert np.allclose(np.diff(k), 0.1)
    d = octmod.make_knots(0.0, 1.0, 11, "dense-at-end", ratio=0.9)
    h = np.diff(d)
    assert d[0] == 0.0 and d[-1] == 1.0
    assert np.allclose(h[1:] / h[:-1], 0.9)


def test_grid_validation():
    with pytest.raises(ValueError):
        octmod.ControlGrid(np.array([0.0, 0.0, 1.0, 2.0]), np.zeros(4))
    with pytest.raises(ValueError):
        octmod.ControlGrid(np.array([0.0, 1.0, 2.0]), np.zeros(3))  # cubic needs 4 knots


@pytest.mark.parametrize("interp", ["cubic", "linear"])
def test_interpolation_matrix(interp):
    knots = octmod.make_knots(-1.0, 2.0, 9, "dense-at-end")
    vals = np.sin(3 * knots)
    nodes = np.linspace(-1.0, 2.0, 77)
    B = octmod.interpolation_matrix(knots, nodes, interp)
    ref = CubicSpline(knots, vals)(nodes) if interp == "cubic" else np.interp(nodes, knots, vals)
    assert np.allclose(B @ vals, ref, atol=1e-13)


def test_discrete_objective_tracks_adaptive_simulation():
    sh = _sech()
    g = 1.0
    knots = octmod.make_knots(sh.t1, sh.t2, 65)
    prob = octmod.StorageProblem.build(sh, g, 0.0, knots, "cubic")
    vals = 0.8 * np.ones(knots.size) + 0.3j * np.sin(knots)
    J = prob.value(np.concatenate([vals.real, vals.imag]))
    grid = octmod.ControlGrid(knots, vals)
    _, eta = dynamics.simulate_storage(grid.to_drive(), dynamics.mirrored_input(sh, sh.t1, sh.t2),
                                       model.MemoryParams.for_rate(g), dynamics.Tier.ATOM_LOSSLESS)
    assert J == pytest.approx(eta, abs=1e-6)


@pytest.mark.parametrize("interp,delta", [("cubic", 0.0), ("linear", 0.7)])
def test_adjoint_matches_finite_differences(interp, delta):
    sh = _sech()
    knots = octmod.make_knots(sh.t1, sh.t2, 17)
    prob = octmod.StorageProblem.build(sh, 1.3, delta, knots, interp)
    rng = np.random.default_rng(0)
    x = rng.normal(scale=0.8, size=2 * knots.size)
    Ja, ga = prob.value_grad_adjoint(x)
    Jf, gf = prob.value_grad_fd(x)
    assert Ja == pytest.approx(Jf, abs=1e-14)
    assert np.max(np.abs(ga - gf)) < 1e-6


def test_zero_drive_is_stationary():
    sh = _sech()
    knots = octmod.make_knots(sh.t1, sh.t2, 17)
    prob = octmod.StorageProblem.build(sh, 1.0, 0.0, knots, "cubic")
    J, g = prob.value_grad_adjoint(np.zeros(2 * knots.size))
    assert J == 0.0 and np.all(g == 0.0)


def test_seeded_run_never_degrades_the_seed():
    sh = _sech()
    g = 1.2 / shapes.time_variance(sh)
    p = model.MemoryParams.for_rate(g)
    seed = control.synthesize_omega_atom(control.optimize_c(sh, g).map, Gamma=g)
    n = 33
    knots = octmod.make_knots(sh.t1, sh.t2, n)
    prob = octmod.StorageProblem.build(sh, g, 0.0, knots, "cubic")
    sv = np.asarray(seed(knots), dtype=complex)
    seed_eta = prob.value(np.concatenate([sv.real, sv.imag]))
    r = octmod.oct_optimize(sh, p, seed_drive=seed, n=n, restarts=0, maxiter=60, resimulate=False)
    assert r.eta_discrete >= seed_eta
    assert any(s["start"] == "seed" for s in r.starts)


def test_small_run_reaches_high_efficiency():
    sh = _sech()
    g = 1.2 / shapes.time_variance(sh)
    r = octmod.oct_optimize(sh, model.MemoryParams.for_rate(g), n=33, restarts=1, maxiter=200)
    ans = control.optimize_c(sh, g).eta
    assert ans - 0.02 <= r.eta <= ans + 1e-3
    assert r.eta == pytest.approx(r.eta_discrete, abs=1e-5)


def test_rejects_other_tiers_and_infinite_windows():
    p = model.MemoryParams.for_rate(1.0)
    with pytest.raises(NotImplementedError):
        octmod.oct_optimize(_sech(), p, tier=dynamics.Tier.FULL)
    with pytest.raises(ValueError):
        octmod.oct_optimize(shapes.sech(), p)
    with pytest.raises(ValueError):
        octmod.oct_optimize(_sech(), p, gradient="newton")


def test_load_scenarios(tmp_path):
    f = tmp_path / "s.json"
    f.write_text(json.dumps({"scenarios": [{"shape": "sech", "gamma_tc": 1.2, "n": 33}]}))
    assert octmod.load_scenarios(f)[0]["n"] == 33
    f.write_text(json.dumps([{"shape": "gaussian"}]))
    assert octmod.load_scenarios(f)[0]["shape"] == "gaussian"
