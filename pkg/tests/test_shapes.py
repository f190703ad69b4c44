import math

import numpy as np
import pytest
from scipy import integrate

from cavmem import shapes

KINDS = ["dec-exp", "inc-exp", "sech", "lorentzian", "gaussian"]


def test_peak_values():
    assert shapes.decreasing_exp()(0.0) == pytest.approx(1.0)
    assert shapes.sech()(0.0) == pytest.approx(1.0)


def test_zero_outside_domain():
    sh = shapes.truncate(shapes.sech(), -1.0, 2.0)
    assert sh(-1.5) == 0.0 and sh(2.5) == 0.0
    assert shapes.decreasing_exp()(-0.1) == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_normalization(kind):
    sh = shapes.make_shape(kind)
    assert sh.weight(sh.t1, sh.t2) == pytest.approx(1.0, abs=1e-10)
    tr = shapes.truncate(sh, *shapes.centered_window(sh, 3.0))
    lo, hi = tr.t1, tr.t2
    val, _ = integrate.quad(lambda t: abs(tr(t)) ** 2, lo, hi, epsabs=1e-13, limit=200)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_cdf_and_tail_are_complementary():
    sh = shapes.lorentzian()
    for t in (-3.0, 0.0, 0.7, 5.0):
        assert sh.cdf(t) + sh.tail(t) == pytest.approx(1.0, abs=1e-12)


def test_time_variance_closed_forms():
    assert shapes.time_variance(shapes.sech()) == pytest.approx(math.pi / (4 * math.sqrt(3)), rel=1e-8)
    assert shapes.time_variance(shapes.gaussian()) == pytest.approx(1 / math.sqrt(2), rel=1e-8)


def test_time_variance_scales_with_tau():
    assert shapes.time_variance(shapes.sech(3.0)) == pytest.approx(3 * shapes.time_variance(shapes.sech()))


def test_truncated_time_variance_matches_quadrature():
    sh = shapes.truncate(shapes.sech(), -math.sqrt(3) * math.pi / 2, math.sqrt(3) * math.pi / 2)
    I = lambda f: integrate.quad(f, sh.t1, sh.t2, epsabs=1e-14)[0]
    m1 = I(lambda t: t * abs(sh(t)) ** 2)
    m2 = I(lambda t: t * t * abs(sh(t)) ** 2)
    assert shapes.time_variance(sh) == pytest.approx(math.sqrt(m2 - m1 ** 2), rel=1e-8)


def test_truncate_rejects_empty_interval():
    with pytest.raises(ValueError):
        shapes.truncate(shapes.sech(), 1.0, 1.0)


def test_truncate_idempotent():
    sh = shapes.truncate(shapes.sech(), -2.0, 3.0)
    again = shapes.truncate(sh, -2.0, 3.0)
    t = np.linspace(-2.0, 3.0, 101)
    assert np.array_equal(sh(t), again(t))


def test_truncated_sech_endpoint_order():
    w = math.sqrt(3) * math.pi
    sh = shapes.truncate(shapes.sech(), -w / 2, w / 2)
    n, a = shapes.taylor_endpoint(sh)
    assert n == 0 and a == pytest.approx(sh(sh.t2), rel=1e-6)
    shifted = shapes.truncate(shapes.sech(), -w / 2, w / 2, shift=True)
    assert abs(shifted(shifted.t2)) < 1e-14
    assert shapes.taylor_endpoint(shifted)[0] == 1


def test_dec_exp_endpoint():
    sh = shapes.truncate(shapes.decreasing_exp(2.0), 0.0, 3.0)
    n, a = shapes.taylor_endpoint(sh)
    assert n == 0 and a == pytest.approx(math.sqrt(2.0) * sh(3.0), rel=1e-6)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_polynomial_onset_order(n):
    t = np.linspace(-1.0, 0.0, 2001)
    sh = shapes.from_samples(t, (1.0 - t) * (-t) ** n + (1.0 if n == 0 else 0.0))
    assert shapes.taylor_endpoint(sh)[0] == n


def test_all_derivatives_vanish_is_an_error():
    t = np.linspace(-1.0, 0.0, 2001)
    with pytest.raises(ValueError):
        shapes.taylor_endpoint(shapes.from_samples(t, t ** 6))


def test_csv_roundtrip(tmp_path):
    t = np.linspace(-3, 3, 301)
    p = tmp_path / "pulse.csv"
    np.savetxt(p, np.column_stack([t, np.exp(-t * t / 2)]), delimiter=",", header="t,re", comments="")
    sh = shapes.from_csv(p)
    assert sh.weight(sh.t1, sh.t2) == pytest.approx(1.0, abs=1e-10)
    g = shapes.truncate(shapes.gaussian(), -3, 3)
    assert sh(0.3) == pytest.approx(g(0.3), rel=1e-4)
