"""Parity between the compiled kernels and the pure-Python fallback."""
import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from cavmem import control, dynamics, kernels, model, shapes

try:
    CY = kernels.backend_module("cython")
except ImportError:
    CY = None
PY = kernels.backend_module("python")
needs_cython = pytest.mark.skipif(CY is None, reason="compiled extension not built")

TIERS = [kernels.FULL, kernels.ATOM, kernels.CAVITY, kernels.CAVITY_SPECIAL, kernels.DECOUPLED]


def _poly(x, y):
    pp = CubicSpline(x, y).c
    return np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(pp, dtype=complex)


def _case(seed=3):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 4.0, 9)
    ox, oc = _poly(x, rng.normal(size=9) + 1j * rng.normal(size=9))
    xe = np.linspace(0.0, 4.0, 41)
    ex, ec = _poly(xe, np.exp(-(xe - 2.0) ** 2))
    p = np.array([1.3, 1.2, 2.0, 0.3, 0.2, 1.5, 0.8, 0.4, 0.8])
    y0 = np.array([0.1, 0.2j, 0.9, 0, 0], dtype=complex)
    return ox, oc, ex, ec, p, y0


def test_backend_reported():
    assert kernels.BACKEND in ("python", "cython")


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")


@needs_cython
@pytest.mark.parametrize("tier", TIERS)
@pytest.mark.parametrize("knot_stops", [False, True])
def test_integrate_parity(tier, knot_stops):
    ox, oc, ex, ec, p, y0 = _case()
    a = PY.integrate(tier, 0.0, 4.0, y0, p, ox, oc, ex, ec, 1e-10, 1e-12, 0.0, 0.05, 2_000_000, knot_stops)
    b = CY.integrate(tier, 0.0, 4.0, y0, p, ox, oc, ex, ec, 1e-10, 1e-12, 0.0, 0.05, 2_000_000, knot_stops)
    # without knot stops accept/reject decisions may differ in the last bit,
    # so the step sequences (and final states) agree only to solver tolerance
    assert np.allclose(a[1][-1], b[1][-1], rtol=0, atol=1e-12 if knot_stops else 1e-8)
    assert a[0][-1] == b[0][-1] == 4.0


@needs_cython
def test_rk4_parity():
    rng = np.random.default_rng(1)
    K = 50
    om = rng.normal(size=(3, 2 * K + 1)) + 1j * rng.normal(size=(3, 2 * K + 1))
    ein = np.exp(-np.linspace(-2, 2, 2 * K + 1) ** 2).astype(complex)
    h = np.full(K, 4.0 / K)
    assert np.allclose(PY.rk4_storage(om, ein, h, 1.1, 0.3), CY.rk4_storage(om, ein, h, 1.1, 0.3), atol=1e-13)
    ja, ga = PY.rk4_storage_grad(om[0], ein, h, 1.1, 0.3)
    jb, gb = CY.rk4_storage_grad(om[0], ein, h, 1.1, 0.3)
    assert ja == pytest.approx(jb, abs=1e-13) and np.allclose(ga, gb, atol=1e-12)


def test_rk4_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    K = 20
    om = 0.5 * (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1))
    ein = np.exp(-np.linspace(-2, 2, 2 * K + 1) ** 2).astype(complex)
    h = np.full(K, 4.0 / K)
    _, g = kernels.rk4_storage_grad(om, ein, h, 1.0, 0.4)
    step = 1e-6
    for i in (0, 7, 2 * K):
        for unit, part in ((1.0, np.real), (1j, np.imag)):
            up, dn = om.copy(), om.copy()
            up[i] += unit * step
            dn[i] -= unit * step
            fd = (abs(kernels.rk4_storage(up[None], ein, h, 1.0, 0.4)[0]) ** 2
                  - abs(kernels.rk4_storage(dn[None], ein, h, 1.0, 0.4)[0]) ** 2) / (2 * step)
            assert part(g[i]) == pytest.approx(fd, abs=1e-8)


@needs_cython
def test_simulation_parity(monkeypatch):
    sh = shapes.sech()
    m = control.optimize_c(sh, 0.6).map
    p = model.MemoryParams(g_sqrtN=6.0, kappa_in=0.6, delta=0.3)
    d = control.synthesize_omega_cavity(m, p)
    fast = dynamics.simulate_retrieval(d, p, dynamics.Tier.CAVITY)
    monkeypatch.setattr(kernels, "integrate", PY.integrate)
    slow = dynamics.simulate_retrieval(d, p, dynamics.Tier.CAVITY)
    assert np.allclose(fast.final, slow.final, atol=1e-10)
    assert dynamics.overlap_efficiency(fast, sh) == pytest.approx(dynamics.overlap_efficiency(slow, sh), abs=1e-10)
