import math

import pytest

from cavmem import asymptotics as A
from cavmem import control, shapes


def test_threshold_times():
    assert A.threshold_time("sech") == 2.0
    assert A.threshold_time("lorentzian") == 23 / 25
    assert A.threshold_time("dec-exp") == 0.5
    assert A.threshold_time("gaussian") is None


def test_inc_exp_unit_rate():
    r = A.table1_inefficiency("inc-exp", 1.0, 1.0)
    assert 1 - r.eta == pytest.approx(5 / 32, abs=1e-14)


def test_inc_exp_below_half_uses_pipeline():
    r = A.table1_inefficiency("inc-exp", 0.4, 1.0)
    assert r.eta == pytest.approx(control.optimize_c(shapes.increasing_exp(), 0.4).eta)
    assert r.regime is A.Regime.BELOW_THRESHOLD


def test_dec_exp_at_threshold():
    assert A.table1_inefficiency("dec-exp", 0.5, 1.0).eta == 1.0
    assert A.dec_exp_exact_eta(0.5, 1.0) == 1.0
    assert A.dec_exp_exact_eta(0.25, 1.0) == pytest.approx(8 / 9)
    assert A.dec_exp_exact_eta(0.4, 1.0) == pytest.approx(
        control.optimize_c(shapes.decreasing_exp(), 0.4).eta, abs=1e-9)


def test_beta_values():
    assert A.beta(0) == math.log(2) - 0.5
    assert A.beta(1) == pytest.approx(9 * (math.exp(1.5) - 4) / (16 * (math.exp(1.5) - 1)))
    assert A.beta(1) == pytest.approx(0.07782, abs=1e-5)
    assert A.beta(2) == pytest.approx(0.48357, abs=1e-5)
    with pytest.raises(NotImplementedError):
        A.beta(3)


def test_truncation_inefficiency():
    assert A.truncation_inefficiency(0, 1.0, 10.0, 1.0) == pytest.approx(A.beta(0) / 10)


def test_truncation_tc_limits():
    assert A.truncation_tc(0, 1.0, 10.0, 1.0, 1.0, 5.0) == pytest.approx(5.0 - 1 / 20)
    assert A.truncation_tc(1, 1.0, 10.0, 1.0, 1.0, 5.0) == pytest.approx(5.0 - 3 / 20)


def test_truncation_tc_matches_pipeline_root():
    w = math.sqrt(3) * math.pi
    sh = shapes.truncate(shapes.sech(), -w / 2, w / 2)
    n, a = shapes.taylor_endpoint(sh)
    for x in (20.0, 40.0):
        r = control.optimize_c(sh, x)
        tc = A.truncation_tc(n, a, x, 1.0, r.eta, sh.t2)
        assert abs(tc - r.map.critical_times[0]) < 5.0 / x ** 2


def _contact_errors(kind, Ta, ds):
    sh = shapes.make_shape(kind)
    out = []
    for d in ds:
        loss = 1 - control.optimize_c(sh, Ta - d).eta
        out.append(abs(loss - (1 - A.table1_inefficiency(kind, Ta - d, 1.0).eta)) / loss)
    return out


@pytest.mark.parametrize("kind,Ta", [("sech", 2.0), ("dec-exp", 0.5)])
def test_near_threshold_contact(kind, Ta):
    errs = _contact_errors(kind, Ta, [0.16, 0.08, 0.04, 0.02])
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.05


def test_gaussian_long_pulse_tracks_pipeline():
    sh = shapes.gaussian()
    ratios = []
    for x in (2.0, 3.0, 4.0):
        loss = 1 - control.optimize_c(sh, x).eta
        ratios.append((1 - A.table1_inefficiency("gaussian", x, 1.0).eta) / loss)
    # the expansion approaches the pipeline from above as the pulse lengthens
    assert all(a > b > 1.0 for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 1.25


def test_result_rejects_bad_eta():
    with pytest.raises(ValueError):
        A.AsymptoteResult(1.5, A.Regime.AT_UNIT)
