"""Closed-form thresholds and asymptotic inefficiencies.

Covers the threshold times of the standard shapes, the near-threshold and
long-pulse expansions of ``1 - eta``, the exact decreasing-exponential
result, and the expansion for pulses truncated at ``t2`` whose amplitude
vanishes there like ``(t - t2)**n``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from cavmem.shapes import ShapeKind


class Regime(str, enum.Enum):
    BELOW_THRESHOLD = "below-threshold"
    AT_UNIT = "at-unit"
    LARGE_TAU = "large-tau"
    TRUNCATION = "truncation"


@dataclass(frozen=True)
class AsymptoteResult:
    eta: float
    regime: Regime
    validity_note: str = ""

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta={self.eta!r} outside [0, 1]")


_THRESHOLDS = {
    ShapeKind.DECREASING_EXP: 0.5,
    ShapeKind.SECH: 2.0,
    ShapeKind.LORENTZIAN: 23.0 / 25.0,
}


def threshold_time(kind):
    """Threshold ``Gamma * T_a`` above which unit efficiency is reached, or None."""
    return _THRESHOLDS.get(ShapeKind(kind))


def dec_exp_exact_eta(Gamma, tau):
    x = Gamma * tau
    if x >= 0.5:
        return 1.0
    return 8.0 * x / (2.0 * x + 1.0) ** 2


def inc_exp_eta(Gamma, tau):
    """Exact efficiency of the increasing exponential for ``Gamma tau > 1/2``."""
    xi = 1.0 / (2.0 * Gamma * tau - 1.0)
    # 1 - eta = 1 - 4**(-xi) * ((1+xi)/(1+2xi))**(-1-2xi); done in logs
    log_eta = -xi * math.log(4.0) - (1.0 + 2.0 * xi) * (math.log1p(xi) - math.log1p(2.0 * xi))
    return math.exp(log_eta)


def _clip01(x):
    return min(1.0, max(0.0, x))


def table1_inefficiency(kind, Gamma, tau) -> AsymptoteResult:
    """Asymptotic efficiency of an untruncated shape.

    Shapes with a threshold use the near-threshold expansion below it and
    report unit efficiency above.  The Gaussian uses its long-pulse
    expansion.  The increasing exponential uses its exact closed form.
    """
    kind = ShapeKind(kind)
    if not (Gamma > 0 and tau > 0):
        raise ValueError("Gamma and tau must be positive")
    x = Gamma * tau
    Ta = threshold_time(kind)
    if Ta is not None:
        if x >= Ta:
            return AsymptoteResult(1.0, Regime.AT_UNIT, "above the threshold time")
        d = Ta - x
        if kind is ShapeKind.DECREASING_EXP:
            loss = d * d
            note = "near-threshold expansion; the exact value is dec_exp_exact_eta"
        elif kind is ShapeKind.SECH:
            loss = d ** 3 / 96.0
            note = "near-threshold expansion"
        else:
            loss = 0.15 * d ** 2.5
            note = ("near-threshold expansion for the single-critical-time strategy; "
                    "the constraint first touches zero at Gamma*tau = 0.91951 in the "
                    "interior of the pulse, where the pipeline efficiency jumps")
        return AsymptoteResult(_clip01(1.0 - loss), Regime.BELOW_THRESHOLD, note)
    if kind is ShapeKind.GAUSSIAN:
        loss = math.exp(1.0 - 9.0 / (16.0 * x ** 4) - 1.0 / (2.0 * x * x) - x * x) / (
            16.0 * math.sqrt(math.pi) * x ** 5)
        return AsymptoteResult(_clip01(1.0 - loss), Regime.LARGE_TAU, "long-pulse expansion")
    if kind is ShapeKind.INCREASING_EXP:
        if x > 0.5:
            return AsymptoteResult(_clip01(inc_exp_eta(Gamma, tau)), Regime.LARGE_TAU,
                                   "exact for Gamma*tau > 1/2")
        from cavmem.control import optimize_c
        from cavmem.shapes import increasing_exp
        eta = optimize_c(increasing_exp(tau), Gamma).eta
        return AsymptoteResult(_clip01(eta), Regime.BELOW_THRESHOLD,
                               "closed form not applicable; value from the retrieval-map pipeline")
    raise ValueError(f"no tabulated asymptote for {kind.value}")


def beta(n):
    """Coefficient of the truncation expansion for endpoint order ``n``."""
    if n == 0:
        return math.log(2.0) - 0.5
    if n == 1:
        e = math.exp(1.5)
        return 9.0 * (e - 4.0) / (16.0 * (e - 1.0))
    if n == 2:
        e = math.exp(2.5)
        return 625.0 * (16.0 - e) / (128.0 * (3.0 * e + 2.0))
    raise NotImplementedError(f"truncation coefficient for n={n} is not available (n <= 2)")


def truncation_inefficiency(n, alpha_n, Gamma, tau):
    """``1 - eta = |alpha_n|^2 beta_n / (Gamma tau)^(2n+1)`` for long truncated pulses."""
    return abs(alpha_n) ** 2 * beta(n) / (Gamma * tau) ** (2 * n + 1)


def truncation_result(n, alpha_n, Gamma, tau) -> AsymptoteResult:
    loss = truncation_inefficiency(n, alpha_n, Gamma, tau)
    return AsymptoteResult(_clip01(1.0 - loss), Regime.TRUNCATION,
                           "leading order in 1/(Gamma*tau); needs Gamma*tau >> 1")


def truncation_tc(n, alpha_n, Gamma, tau, eta, t2):
    """Approximate critical time of a truncated pulse ending at ``t2``."""
    corr = (tau ** (2 * n + 1) * Gamma ** (2 * n) / abs(alpha_n) ** 2
            * 4.0 ** n * (1.0 - eta) / (2 * n + 1) ** (2 * n - 1))
    return t2 - (1 + 2 * n) / (2.0 * Gamma) - corr
