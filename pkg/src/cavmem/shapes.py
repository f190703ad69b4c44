"""Photon pulse shapes: evaluation, truncation, time variance, endpoint analysis.

Analytic shapes are written as ``phi(t) = norm * (f(t/tau)/sqrt(tau) - offset)``
on ``[t1, t2]`` and zero elsewhere, where ``f`` is one of the reference forms

=============  ==========================  ==================
kind           f(u)                        natural domain
=============  ==========================  ==================
dec-exp        exp(-u/2)                   [0, inf)
inc-exp        exp(u/2)                    (-inf, 0]
sech           sech(2u)                    (-inf, inf)
lorentzian     sqrt(2/pi) / (1 + u^2)      (-inf, inf)
gaussian       pi^(-1/4) exp(-u^2/2)       (-inf, inf)
=============  ==========================  ==================

Each analytic kind carries closed forms for the cumulative intensity, its
complement (the "tail") and the amplitude antiderivative, so that norms and
remaining weights stay accurate to rounding even deep in the tails.
Infinite endpoints are stored as ``float('inf')``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

INF = math.inf
TAIL_CAP = 40.0  # cap for infinite domains, in units of tau
MAX_TAYLOR_ORDER = 4

_SQRT_2_PI = math.sqrt(2.0 / math.pi)
_PI_M14 = math.pi ** -0.25


class ShapeKind(str, enum.Enum):
    DECREASING_EXP = "dec-exp"
    INCREASING_EXP = "inc-exp"
    SECH = "sech"
    LORENTZIAN = "lorentzian"
    GAUSSIAN = "gaussian"
    TABULATED = "tabulated"


_NATURAL_DOMAIN = {
    ShapeKind.DECREASING_EXP: (0.0, INF),
    ShapeKind.INCREASING_EXP: (-INF, 0.0),
    ShapeKind.SECH: (-INF, INF),
    ShapeKind.LORENTZIAN: (-INF, INF),
    ShapeKind.GAUSSIAN: (-INF, INF),
}


# --- reference forms in the dimensionless variable u = t / tau -------------

def _sech(x):
    e = np.exp(-np.abs(x))
    return 2.0 * e / (1.0 + e * e)


def _ref_value(kind, u):
    if kind is ShapeKind.DECREASING_EXP:
        return np.exp(-0.5 * u)
    if kind is ShapeKind.INCREASING_EXP:
        return np.exp(0.5 * u)
    if kind is ShapeKind.SECH:
        return _sech(2.0 * u)
    if kind is ShapeKind.LORENTZIAN:
        return _SQRT_2_PI / (1.0 + u * u)
    return _PI_M14 * np.exp(-0.5 * u * u)


def _ref_deriv(kind, u):
    if kind is ShapeKind.DECREASING_EXP:
        return -0.5 * np.exp(-0.5 * u)
    if kind is ShapeKind.INCREASING_EXP:
        return 0.5 * np.exp(0.5 * u)
    if kind is ShapeKind.SECH:
        return -2.0 * np.tanh(2.0 * u) * _sech(2.0 * u)
    if kind is ShapeKind.LORENTZIAN:
        return -2.0 * _SQRT_2_PI * u / (1.0 + u * u) ** 2
    return -u * _PI_M14 * np.exp(-0.5 * u * u)


def _lorentz_upper(u):
    """Intensity weight of the reference Lorentzian above u (u >= 0)."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    big = u > 10.0
    small = ~big
    us = u[small]
    out[small] = (np.arctan2(1.0, us) - us / (1.0 + us * us)) / math.pi
    w = 1.0 / u[big]
    w2 = w * w
    # arctan(w) - w/(1+w^2) = sum_k (-1)^(k+1) 2k/(2k+1) w^(2k+1)
    acc = np.zeros_like(w)
    term = w.copy()
    for k in range(1, 12):
        term = term * w2
        acc += (-1) ** (k + 1) * (2.0 * k / (2.0 * k + 1.0)) * term
    out[big] = acc / math.pi
    return out


def _ref_tail(kind, u):
    """Weight of |f|^2 above u (reference shape, unit total weight)."""
    u = np.asarray(u, dtype=float)
    if kind is ShapeKind.DECREASING_EXP:
        return np.where(u <= 0.0, 1.0, np.exp(-np.maximum(u, 0.0)))
    if kind is ShapeKind.INCREASING_EXP:
        return np.where(u >= 0.0, 0.0, -np.expm1(np.minimum(u, 0.0)))
    if kind is ShapeKind.SECH:
        return special.expit(-4.0 * u)
    if kind is ShapeKind.LORENTZIAN:
        return np.where(u >= 0.0, _lorentz_upper(np.abs(u)), 1.0 - _lorentz_upper(np.abs(u)))
    return 0.5 * special.erfc(u)


def _ref_cdf(kind, u):
    """Weight of |f|^2 below u (reference shape, unit total weight)."""
    u = np.asarray(u, dtype=float)
    if kind is ShapeKind.DECREASING_EXP:
        return np.where(u <= 0.0, 0.0, -np.expm1(-np.maximum(u, 0.0)))
    if kind is ShapeKind.INCREASING_EXP:
        return np.where(u >= 0.0, 1.0, np.exp(np.minimum(u, 0.0)))
    if kind is ShapeKind.SECH:
        return special.expit(4.0 * u)
    if kind is ShapeKind.LORENTZIAN:
        return np.where(u <= 0.0, _lorentz_upper(np.abs(u)), 1.0 - _lorentz_upper(np.abs(u)))
    return 0.5 * special.erfc(-u)


def _ref_antideriv(kind, u):
    """An antiderivative of f(u) in u (used for shifted shapes)."""
    u = np.asarray(u, dtype=float)
    if kind is ShapeKind.DECREASING_EXP:
        return -2.0 * np.exp(-0.5 * u)
    if kind is ShapeKind.INCREASING_EXP:
        return 2.0 * np.exp(0.5 * u)
    if kind is ShapeKind.SECH:
        return np.arctan(np.tanh(u))
    if kind is ShapeKind.LORENTZIAN:
        return _SQRT_2_PI * np.arctan(u)
    return _PI_M14 * math.sqrt(math.pi / 2.0) * special.erf(u / math.sqrt(2.0))


# --- tabulated shapes --------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True, eq=False)
class _Table:
    """Cubic-spline amplitude with exact cumulative intensity at the knots."""

    times: np.ndarray
    values: np.ndarray
    spline: CubicSpline = field(repr=False)
    cum: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        if times.ndim != 1 or times.size < 4:
            raise ValueError("tabulated shapes need at least 4 samples")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        spline = CubicSpline(times, values)
        a, b = times[:-1], times[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        piece = np.sum(np.abs(spline(nodes)) ** 2 * _GL_W, axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(piece)])
        return cls(times, values, spline, cum)

    def weight_below(self, t):
        """Integral of |spline|^2 from the first knot to t (clipped)."""
        t = np.clip(np.asarray(t, dtype=float), self.times[0], self.times[-1])
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        a = self.times[i]
        half = 0.5 * (t - a)
        nodes = (a + half)[..., None] + half[..., None] * _GL_X
        part = np.sum(np.abs(self.spline(nodes)) ** 2 * _GL_W, axis=-1) * half
        return self.cum[i] + part


# --- the shape record --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PulseShape:
    """Normalized photon mode function.

    Parameters
    ----------
    kind : ShapeKind
    tau : float
        Characteristic time.
    t1, t2 : float
        Domain endpoints (``±inf`` allowed for analytic kinds).
    norm : float
        Amplitude renormalization applied after truncation.
    offset : float
        Amplitude subtracted before scaling, used to force ``phi(t2) = 0``.
    """

    kind: ShapeKind
    tau: float
    t1: float
    t2: float
    norm: float = 1.0
    offset: float = 0.0
    table: _Table | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.t1 < self.t2:
            raise ValueError("need t1 < t2")

    # evaluation
    def base(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is ShapeKind.TABULATED:
            return self.table.spline(t)
        return _ref_value(self.kind, t / self.tau) / math.sqrt(self.tau)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t1) & (t <= self.t2)
        tt = np.where(inside, t, self._finite_point())
        val = self.norm * (self.base(tt) - self.offset)
        if self.kind is ShapeKind.TABULATED:
            return np.where(inside, val, 0.0 + 0.0j)
        return np.where(inside, val, 0.0)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t1) & (t <= self.t2)
        tt = np.where(inside, t, self._finite_point())
        if self.kind is ShapeKind.TABULATED:
            d = self.table.spline(tt, 1)
            return np.where(inside, self.norm * d, 0.0 + 0.0j)
        d = _ref_deriv(self.kind, tt / self.tau) / self.tau ** 1.5
        return np.where(inside, self.norm * d, 0.0)

    @property
    def is_complex(self):
        return self.kind is ShapeKind.TABULATED and bool(np.any(self.table.values.imag != 0))

    def _finite_point(self):
        if math.isfinite(self.t1):
            return self.t1
        if math.isfinite(self.t2):
            return self.t2
        return 0.0

    # cumulative weights
    def _raw_between(self, a, b):
        """Integral of |base - offset|^2 over [a, b] (arrays broadcast)."""
        if self.kind is ShapeKind.TABULATED:
            return self.table.weight_below(b) - self.table.weight_below(a)
        k, tau, off = self.kind, self.tau, self.offset
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        # differences of the tail are accurate for the upper part, of the cdf
        # for the lower part; pick per element
        ua, ub = a / tau, b / tau
        via_tail = _ref_tail(k, ua) - _ref_tail(k, ub)
        via_cdf = _ref_cdf(k, ub) - _ref_cdf(k, ua)
        w = np.where(ua >= 0.0, via_tail, via_cdf)
        if off != 0.0:
            ia = _ref_antideriv(k, ua)
            ib = _ref_antideriv(k, ub)
            w = w - 2.0 * off * math.sqrt(tau) * (ib - ia) + off * off * (b - a)
        return w

    def cdf(self, t):
        """Weight of |phi|^2 on [t1, t] (0 before t1, 1 after t2)."""
        t = np.clip(np.asarray(t, dtype=float), self.t1, self.t2)
        return self.norm ** 2 * self._raw_between(np.full_like(t, self.t1), t)

    def tail(self, t):
        """Weight of |phi|^2 on [t, t2], computed without cancellation."""
        t = np.clip(np.asarray(t, dtype=float), self.t1, self.t2)
        return self.norm ** 2 * self._raw_between(t, np.full_like(t, self.t2))

    def weight(self, a, b):
        """Weight of |phi|^2 on [a, b] (clipped to the domain)."""
        a = np.clip(np.asarray(a, dtype=float), self.t1, self.t2)
        b = np.clip(np.asarray(b, dtype=float), self.t1, self.t2)
        return self.norm ** 2 * self._raw_between(a, b)

    def window(self, eps=1e-18):
        """Finite interval carrying the shape for numerical work.

        Finite endpoints are kept.  An infinite end is replaced by the point
        where the remaining weight drops below ``eps`` or by the
        ``TAIL_CAP * tau`` cap, whichever comes first.
        """
        lo, hi = self.t1, self.t2
        if not math.isfinite(lo):
            ref = hi if math.isfinite(hi) else 0.0
            lo = ref - TAIL_CAP * self.tau
            if self.cdf(lo) < eps:
                lo = _bisect_level(lambda x: self.cdf(x) - eps, lo, ref)
        if not math.isfinite(hi):
            ref = self.t1 if math.isfinite(self.t1) else 0.0
            hi = ref + TAIL_CAP * self.tau
            if self.tail(hi) < eps:
                hi = _bisect_level(lambda x: eps - self.tail(x), ref, hi)
        return float(lo), float(hi)

    @property
    def untruncated(self):
        if self.kind is ShapeKind.TABULATED:
            return False
        return (self.t1, self.t2) == _NATURAL_DOMAIN[self.kind] and self.offset == 0.0


def _bisect_level(fn, a, b, iters=200):
    """Point in [a, b] where increasing ``fn`` crosses zero (coarse, 1e-13 rel)."""
    fa = fn(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = fn(m)
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
        if b - a < 1e-13 * max(1.0, abs(a)):
            break
    return 0.5 * (a + b)


# --- constructors ------------------------------------------------------------

def make_shape(kind, tau=1.0):
    """Untruncated analytic shape of the given kind."""
    kind = ShapeKind(kind)
    if kind is ShapeKind.TABULATED:
        raise ValueError("use from_samples or from_csv for tabulated shapes")
    t1, t2 = _NATURAL_DOMAIN[kind]
    return PulseShape(kind, float(tau), t1, t2)


def decreasing_exp(tau=1.0):
    return make_shape(ShapeKind.DECREASING_EXP, tau)


def increasing_exp(tau=1.0):
    return make_shape(ShapeKind.INCREASING_EXP, tau)


def sech(tau=1.0):
    return make_shape(ShapeKind.SECH, tau)


def lorentzian(tau=1.0):
    return make_shape(ShapeKind.LORENTZIAN, tau)


def gaussian(tau=1.0):
    return make_shape(ShapeKind.GAUSSIAN, tau)


def from_samples(times, values, tau=None):
    """Tabulated shape (cubic interpolation), renormalized on its sample span."""
    table = _Table.build(times, values)
    total = table.cum[-1]
    if not total > 0:
        raise ValueError("tabulated shape has zero weight")
    t1, t2 = float(table.times[0]), float(table.times[-1])
    shape = PulseShape(ShapeKind.TABULATED, 1.0, t1, t2, 1.0 / math.sqrt(total), 0.0, table)
    if tau is None:
        tau = time_variance(shape)
    return replace(shape, tau=float(tau))


def from_csv(path, tau=None):
    """Read a tabulated shape from CSV columns ``t, Re phi[, Im phi]``."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                nums = [float(v) for v in rec]
            except ValueError:
                if rows:
                    raise
                continue  # header line
            if len(nums) not in (2, 3):
                raise ValueError(f"expected 2 or 3 columns, got {len(nums)}")
            rows.append(nums)
    if not rows:
        raise ValueError(f"no samples in {path}")
    arr = np.array([r + [0.0] * (3 - len(r)) for r in rows])
    return from_samples(arr[:, 0], arr[:, 1] + 1j * arr[:, 2], tau=tau)


# --- operations --------------------------------------------------------------

def evaluate(shape, t):
    """Amplitude ``phi(t)``; exactly zero outside ``[t1, t2]``."""
    return shape(t)


def truncate(shape, t1, t2, shift=False):
    """Restrict ``shape`` to ``[t1, t2]`` and renormalize.

    With ``shift=True`` a constant is subtracted from the amplitude so that
    ``phi(t2) = 0``, raising the endpoint Taylor order from 0 to 1.  An
    existing offset is kept when ``shift`` is false, which makes repeated
    truncation on the same window idempotent.
    """
    t1, t2 = float(t1), float(t2)
    if not t1 < t2:
        raise ValueError("truncation window must satisfy t1 < t2")
    if shape.kind is ShapeKind.TABULATED:
        lo, hi = shape.table.times[0], shape.table.times[-1]
    else:
        lo, hi = _NATURAL_DOMAIN[shape.kind]
    a, b = max(t1, lo), min(t2, hi)
    if not a < b:
        raise ValueError("truncation window does not overlap the shape's domain")
    offset = shape.offset
    if shift:
        if not math.isfinite(b):
            raise ValueError("shift needs a finite t2")
        offset = float(np.real(shape.base(b)))
    probe = replace(shape, t1=a, t2=b, norm=1.0, offset=offset)
    weight = float(probe._raw_between(a, b))
    if not weight > 0 or not math.isfinite(weight):
        raise ValueError("zero total weight on the truncation window")
    return replace(probe, norm=1.0 / math.sqrt(weight))


def centered_window(shape, width):
    """Truncate to a window of the given width placed as the figures do.

    Symmetric shapes are centred on 0, the decreasing exponential starts at 0
    and the increasing exponential ends at 0.
    """
    if shape.kind is ShapeKind.DECREASING_EXP:
        return 0.0, float(width)
    if shape.kind is ShapeKind.INCREASING_EXP:
        return -float(width), 0.0
    return -0.5 * float(width), 0.5 * float(width)


def _moments_quad(fn, a, b):
    kw = dict(epsabs=1e-13, epsrel=1e-12, limit=500)
    val, err = integrate.quad(fn, a, b, **kw)
    if not math.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise ArithmeticError(f"quadrature did not converge (estimate {val}, error {err})")
    return val


def time_variance(shape):
    """Standard deviation of t under |phi|^2 (adaptive quadrature)."""
    a, b = shape.t1, shape.t2
    inten = lambda t: float(np.abs(shape(t)) ** 2)
    if math.isfinite(a) and math.isfinite(b):
        m0 = _moments_quad(inten, a, b)
        m1 = _moments_quad(lambda t: t * inten(t), a, b)
        mean = m1 / m0
        m2 = _moments_quad(lambda t: (t - mean) ** 2 * inten(t), a, b)
        return math.sqrt(m2 / m0)
    # infinite limits use the quadrature's own transformation; split at the
    # peak region for robustness
    split = shape._finite_point()
    parts = [(a, split), (split, b)]
    def mom(fn):
        return sum(_moments_quad(fn, lo, hi) for lo, hi in parts if lo < hi)
    m0 = mom(inten)
    mean = mom(lambda t: t * inten(t)) / m0
    m2 = mom(lambda t: (t - mean) ** 2 * inten(t))
    return math.sqrt(m2 / m0)


def taylor_endpoint(shape, max_order=MAX_TAYLOR_ORDER, rel_tol=1e-7):
    """Leading power ``n`` and coefficient ``alpha_n`` of phi near ``t2``.

    ``phi(t) ~ alpha_n * tau**-0.5 * ((t - t2)/tau)**n``.  The derivatives are
    obtained from a least-squares polynomial fit on Chebyshev nodes just
    inside ``t2`` (a high-order one-sided difference stencil).
    """
    if not math.isfinite(shape.t2):
        raise ValueError("endpoint analysis needs a finite t2")
    tau = shape.tau
    span = min(0.1 * tau, 0.5 * (shape.t2 - shape.window()[0]))
    deg = 10
    k = np.arange(3 * deg)
    x = -span * 0.5 * (1.0 - np.cos(np.pi * k / (k.size - 1)))  # in [-span, 0]
    vals = np.asarray(shape(shape.t2 + x))
    if np.iscomplexobj(vals) and np.all(vals.imag == 0):
        vals = vals.real
    cheb = np.polynomial.Chebyshev.fit(x / tau, vals * math.sqrt(tau), deg,
                                       domain=[-span / tau, 0.0])
    coef = cheb.convert(kind=np.polynomial.Polynomial, domain=[-1, 1], window=[-1, 1]).coef
    coef = np.concatenate([coef, np.zeros(max(0, max_order + 1 - coef.size))])
    lead = coef[: max_order + 1]
    # zero test relative to the pulse peak, not the (possibly tiny) values near t2
    lo, hi = shape.window()
    peak = float(np.max(np.abs(shape(np.linspace(lo, hi, 2001)))))
    scale = max(peak * math.sqrt(tau), 1e-300)
    for n, a in enumerate(lead):
        if abs(a) > rel_tol * scale:
            return n, (complex(a) if np.iscomplexobj(a) and a.imag != 0 else float(np.real(a)))
    raise ValueError(f"no nonvanishing Taylor term up to order {max_order} at t2")
