"""Critical-time retrieval maps, their efficiencies, and control synthesis.

A retrieval map is the target output mode ``psi(t)`` built from the desired
photon shape ``phi``: a scaled copy ``c*phi`` until the spin wave is depleted
at the critical time ``t_c``, followed by free exponential decay at the
limiting rate ``R`` (``Gamma`` for atom-limited memories, ``kappa`` for
cavity-limited ones).  The efficiency is the squared overlap of ``psi`` with
``phi``; ``c`` is fixed by iterating ``c <- 1/sqrt(eta(c))``.

The feasibility condition used throughout is

    D(t) = 2 R (1 - int_{t1}^t |psi|^2) - |psi(t)|^2  >=  0,

which is the statement that the spin-wave population cannot go negative.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from cavmem import __version__
from cavmem.model import MemoryParams
from cavmem.shapes import PulseShape, ShapeKind

SCAN_POINTS = 4096
FP_TOL = 1e-10
FP_MAX_ITER = 200
EPS_EXCLUDE = 1e-6       # excluded neighbourhood of critical times, in 1/rate
SYNTH_POINTS = 4001
DECOUPLE_M = 100.0
NOISE = 1e-12  # relative round-off floor for the constraint scan


class ConvergenceError(ArithmeticError):
    pass


class ConstraintViolation(ValueError):
    pass


class SegmentKind(str, enum.Enum):
    SCALED_SHAPE = "shape"
    EXP_DECAY = "decay"


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    kind: SegmentKind
    scale: complex


@dataclass(frozen=True, eq=False)
class RetrievalMap:
    """Piecewise target mode ``psi``.

    ``fallback`` marks a two-critical-time request that degraded to the
    single-critical-time construction.
    """

    segments: tuple
    critical_times: tuple
    c: float
    rate: float
    shape: PulseShape
    fallback: bool = False

    @property
    def t1(self):
        return self.shape.t1

    @property
    def t2(self):
        return self.shape.t2

    @property
    def degenerate(self):
        """True for the fast-retrieval map (spin wave emptied at t1)."""
        return bool(self.critical_times) and self.critical_times[0] == self.shape.t1

    def _locate(self, t):
        starts = np.array([s.t_start for s in self.segments])
        idx = np.searchsorted(starts, t, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for seg in self.segments:
            m = (t >= seg.t_start) & (t <= seg.t_end)
            if seg is self.segments[-1]:
                pass
            else:
                m &= t < seg.t_end
            if not np.any(m):
                continue
            if seg.kind is SegmentKind.SCALED_SHAPE:
                out[m] = seg.scale * self.shape(t[m])
            else:
                out[m] = seg.scale * np.exp(-self.rate * (t[m] - seg.t_start))
        return out

    def psi_dot(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for seg in self.segments:
            m = (t >= seg.t_start) & (t <= seg.t_end)
            if seg is not self.segments[-1]:
                m &= t < seg.t_end
            if not np.any(m):
                continue
            if seg.kind is SegmentKind.SCALED_SHAPE:
                out[m] = seg.scale * self.shape.derivative(t[m])
            else:
                out[m] = -self.rate * seg.scale * np.exp(-self.rate * (t[m] - seg.t_start))
        return out

    def _segment_weight(self, seg, a, b):
        """Weight of |psi|^2 over [a, b] inside one segment (arrays)."""
        s2 = abs(seg.scale) ** 2
        if seg.kind is SegmentKind.SCALED_SHAPE:
            return s2 * self.shape.weight(a, b)
        R = self.rate
        ea = np.exp(-2.0 * R * (np.asarray(a) - seg.t_start))
        return s2 * ea * (-np.expm1(-2.0 * R * (np.asarray(b) - np.asarray(a)))) / (2.0 * R)

    def remaining(self, t):
        """``1 - int_{t1}^t |psi|^2`` evaluated without cancellation."""
        t = np.asarray(t, dtype=float)
        out = np.ones(t.shape)
        before = 0.0
        for seg in self.segments:
            a, b = seg.t_start, seg.t_end
            m = (t >= a) & (t <= b)
            if np.any(m):
                if seg.kind is SegmentKind.SCALED_SHAPE:
                    s2 = abs(seg.scale) ** 2
                    # 1 - before - s2*(tail(a) - tail(t)) with tail differences exact
                    out[m] = (1.0 - before - s2 * self.shape.tail(a)) + s2 * self.shape.tail(t[m])
                else:
                    out[m] = 1.0 - before - self._segment_weight(seg, a, t[m])
            before += float(self._segment_weight(seg, a, b))
            out[t > b] = 1.0 - before
        return out

    def emitted(self, t):
        return 1.0 - self.remaining(t)

    def constraint(self, t):
        """``D(t) = 2R * remaining - |psi|^2`` (nonnegative for feasible maps)."""
        return 2.0 * self.rate * self.remaining(t) - np.abs(self.psi(t)) ** 2

    def total_weight(self):
        return float(sum(self._segment_weight(s, s.t_start, s.t_end) for s in self.segments))


# --- critical time -----------------------------------------------------------

def violation_function(shape, rate, c):
    """``D(t)`` for the unmodified ansatz ``psi = c*phi``."""
    c2 = c * c

    def D(t):
        rem = (1.0 - c2) + c2 * shape.tail(t)
        return 2.0 * rate * rem - c2 * np.abs(shape(t)) ** 2

    return D


def _brent(fn, a, b, tau):
    return optimize.brentq(fn, a, b, xtol=1e-12 * tau, rtol=1e-15, maxiter=500)


def find_critical_time(shape: PulseShape, rate: float, c: float = 1.0, n_grid: int = SCAN_POINTS):
    """Earliest time where ``D`` for ``psi = c*phi`` reaches zero from above.

    Returns ``t1`` when the constraint already fails at the start and
    ``None`` when it holds on the whole domain.
    """
    if not (rate > 0 and c > 0):
        raise ValueError("rate and c must be positive")
    D = violation_function(shape, rate, c)
    lo, hi = shape.window()
    grid = np.linspace(lo, hi, n_grid)
    vals = D(grid)
    # D is a difference of two small terms in the tails; negatives at
    # round-off level relative to those terms are not violations
    c2 = c * c
    size = 2.0 * rate * (abs(1.0 - c2) + c2 * shape.tail(grid)) + c2 * np.abs(shape(grid)) ** 2
    bad = np.flatnonzero((vals < -NOISE * size) | ((vals <= 0.0) & (size == 0.0)))
    if bad.size:
        i = bad[0]
        if i == 0 or vals[0] <= 0.0:
            return float(lo)
        j = int(np.flatnonzero(vals[:i] > 0.0)[-1])
        if vals[j + 1] == 0.0:
            return float(grid[j + 1])
        return float(_brent(D, grid[j], grid[j + 1], shape.tau))
    if c > 1.0 and hi < shape.t2:
        # the remaining weight runs out beyond the numerical window
        level = (c * c - 1.0) / (c * c)
        x = hi
        step = shape.tau
        while shape.tail(x) > level:
            x += step
            step *= 2.0
            if not math.isfinite(x):
                break
        fine = np.concatenate([hi + (x - hi) * np.linspace(0.0, 1.0, n_grid) ** 3])
        fv = D(fine)
        bad = np.flatnonzero(fv <= 0.0)
        if bad.size == 0 or bad[0] == 0:
            raise ConvergenceError(
                f"could not bracket the critical time beyond the window; grid [{hi}, {x}]")
        i = bad[0]
        return float(_brent(D, fine[i - 1], fine[i], shape.tau))
    return None


# --- maps ----------------------------------------------------------------------

def _shape_only_map(shape, rate):
    seg = Segment(shape.t1, shape.t2, SegmentKind.SCALED_SHAPE, 1.0 + 0j)
    return RetrievalMap((seg,), (), 1.0, rate, shape)


def fast_map(shape, rate):
    """Spin wave moved to the excited state at t1, then free decay."""
    if not math.isfinite(shape.t1):
        raise ValueError("fast retrieval needs a finite start time")
    p1 = complex(shape(shape.t1))
    if p1 == 0:
        raise ValueError("fast retrieval needs phi(t1) != 0")
    phase = p1 / abs(p1)
    seg = Segment(shape.t1, shape.t2, SegmentKind.EXP_DECAY, math.sqrt(2.0 * rate) * phase)
    c = math.sqrt(2.0 * rate) / abs(p1)
    return RetrievalMap((seg,), (shape.t1,), c, rate, shape)


def single_tc_map(shape, rate, c, tc="auto"):
    """Map ``c*phi`` until the critical time, exponential decay afterwards."""
    if tc == "auto":
        tc = find_critical_time(shape, rate, c)
    if tc is None:
        seg = Segment(shape.t1, shape.t2, SegmentKind.SCALED_SHAPE, complex(c))
        return RetrievalMap((seg,), (), c, rate, shape)
    if tc <= shape.t1:
        return fast_map(shape, rate)
    decay_scale = c * complex(shape(tc))
    segs = (
        Segment(shape.t1, tc, SegmentKind.SCALED_SHAPE, complex(c)),
        Segment(tc, shape.t2, SegmentKind.EXP_DECAY, decay_scale),
    )
    return RetrievalMap(segs, (tc,), c, rate, shape)


def _exp_kind_rate(shape):
    """Exponent mu for pure exponential shapes (phi ~ exp(mu t)), else None."""
    if shape.offset != 0.0:
        return None
    if shape.kind is ShapeKind.DECREASING_EXP:
        return -0.5 / shape.tau
    if shape.kind is ShapeKind.INCREASING_EXP:
        return 0.5 / shape.tau
    return None


def _expint(nu, L):
    """int_0^L exp(nu s) ds, stable for small and infinite L."""
    if math.isinf(L):
        if nu >= 0:
            raise ArithmeticError("divergent exponential integral")
        return -1.0 / nu
    x = nu * L
    if abs(x) < 1e-8:
        return L * (1.0 + 0.5 * x)
    return math.expm1(x) / nu


def _decay_overlap(shape, rate, a, b, scale):
    """scale * int_a^b conj(phi(t)) exp(-rate (t - a)) dt."""
    b = min(b, shape.t2)
    a = max(a, shape.t1)
    if not b > a:
        return 0j
    mu = _exp_kind_rate(shape)
    if mu is not None:
        amp = shape.norm * math.exp(mu * a) / math.sqrt(shape.tau)
        return scale * amp * _expint(mu - rate, b - a)
    kw = dict(epsabs=1e-14, epsrel=1e-12, limit=800)
    re = lambda t: float(np.real(np.conj(shape(t)))) * math.exp(-rate * (t - a))
    val, err = integrate.quad(re, a, b, **kw)
    if not (math.isfinite(val) and err < 1e-9):
        raise ArithmeticError(f"overlap quadrature failed on [{a}, {b}] (error {err})")
    if shape.is_complex:
        im = lambda t: float(np.imag(np.conj(shape(t)))) * math.exp(-rate * (t - a))
        vi, erri = integrate.quad(im, a, b, **kw)
        if not (math.isfinite(vi) and erri < 1e-9):
            raise ArithmeticError(f"overlap quadrature failed on [{a}, {b}] (error {erri})")
        val = complex(val, vi)
    return scale * val


def overlap_amplitude(m: RetrievalMap) -> complex:
    """``int conj(phi) psi dt`` segment by segment."""
    total = 0j
    for seg in m.segments:
        if seg.kind is SegmentKind.SCALED_SHAPE:
            total += seg.scale * float(m.shape.weight(seg.t_start, seg.t_end))
        else:
            total += _decay_overlap(m.shape, m.rate, seg.t_start, seg.t_end, seg.scale)
    return total


def overlap_eta(m: RetrievalMap) -> float:
    """Efficiency ``|int conj(phi) psi dt|^2`` of a retrieval map."""
    return float(min(1.0, abs(overlap_amplitude(m)) ** 2))


# --- fixed point -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OptimizeResult:
    c: float
    map: RetrievalMap
    eta: float
    iterations: int
    degenerate: bool = False


def _fixed_point(build, c0=1.0, tol=FP_TOL, max_iter=FP_MAX_ITER, damping=1.0):
    """Iterate ``c <- (1-lam) c + lam/sqrt(eta(c))`` with halving on oscillation."""
    c, lam, prev = c0, damping, None
    history = [c]
    for it in range(1, max_iter + 1):
        m = build(c)
        eta = overlap_eta(m)
        if not eta > 0:
            raise ConvergenceError(f"zero efficiency at c={c!r}")
        step = lam * (1.0 / math.sqrt(eta) - c)
        if prev is not None and step * prev < 0 and abs(step) > 0.5 * abs(prev):
            lam *= 0.5
            step *= 0.5
        c_new = c + step
        history.append(c_new)
        if abs(c_new - c) < tol:
            return c_new, it
        prev, c = step, c_new
    raise ConvergenceError(f"fixed point not reached in {max_iter} iterations; "
                           f"last iterates {history[-2]!r}, {history[-1]!r}")


def optimize_c(shape: PulseShape, rate: float, tol=FP_TOL, max_iter=FP_MAX_ITER,
               damping=1.0) -> OptimizeResult:
    """Optimal single-critical-time map and its efficiency."""
    tc = find_critical_time(shape, rate, 1.0)
    if tc is None:
        m = _shape_only_map(shape, rate)
        return OptimizeResult(1.0, m, overlap_eta(m), 0)
    if tc <= shape.t1:
        m = fast_map(shape, rate)
        return OptimizeResult(m.c, m, overlap_eta(m), 0, True)
    c, it = _fixed_point(lambda c: single_tc_map(shape, rate, c), tol=tol,
                         max_iter=max_iter, damping=damping)
    m = single_tc_map(shape, rate, c)
    if m.degenerate:
        return OptimizeResult(m.c, m, overlap_eta(m), it, True)
    return OptimizeResult(c, m, overlap_eta(m), it)


def eta_at(shape, rate, c):
    """Efficiency of the single-critical-time map at a prescribed ``c``."""
    return overlap_eta(single_tc_map(shape, rate, c))


# --- two critical times ----------------------------------------------------------

def recovery_time(shape, rate, after, n_grid=SCAN_POINTS):
    """Time after which ``phi`` itself becomes feasible again.

    This is the last upward zero of ``2R*tail(t) - |phi(t)|^2`` beyond
    ``after``; the corresponding third segment ``k*phi`` then carries exactly
    the weight needed for ``int |psi|^2 = 1``.  ``None`` if ``phi`` never
    becomes feasible again inside the domain.
    """
    D1 = violation_function(shape, rate, 1.0)
    lo, hi = shape.window()
    grid = np.linspace(after, hi, n_grid)
    vals = D1(grid)
    if vals[-1] <= 0.0:
        return None
    bad = np.flatnonzero(vals <= 0.0)
    if bad.size == 0:
        return None
    i = bad[-1]
    if vals[i] == 0.0:
        return float(grid[i])
    return float(_brent(D1, grid[i], grid[i + 1], shape.tau))


def two_tc_build(shape, rate, c, tc2):
    tc1 = find_critical_time(shape, rate, c)
    if tc1 is None or tc1 <= shape.t1 or tc1 >= tc2:
        return single_tc_map(shape, rate, c, tc1)
    scale_mid = c * complex(shape(tc1))
    bridge = scale_mid * math.exp(-rate * (tc2 - tc1))
    k = bridge / complex(shape(tc2))
    segs = (
        Segment(shape.t1, tc1, SegmentKind.SCALED_SHAPE, complex(c)),
        Segment(tc1, tc2, SegmentKind.EXP_DECAY, scale_mid),
        Segment(tc2, shape.t2, SegmentKind.SCALED_SHAPE, k),
    )
    return RetrievalMap(segs, (tc1, tc2), c, rate, shape)


def two_tc_map(shape: PulseShape, rate: float, tol=FP_TOL, max_iter=FP_MAX_ITER) -> OptimizeResult:
    """Map with a second critical time where ``psi`` rejoins the shape."""
    tc = find_critical_time(shape, rate, 1.0)
    if tc is None:
        m = _shape_only_map(shape, rate)
        m = RetrievalMap(m.segments, m.critical_times, m.c, m.rate, m.shape, fallback=True)
        return OptimizeResult(1.0, m, overlap_eta(m), 0)
    tc2 = recovery_time(shape, rate, tc) if tc > shape.t1 else None
    if tc2 is None:
        res = optimize_c(shape, rate, tol=tol, max_iter=max_iter)
        m = res.map
        m = RetrievalMap(m.segments, m.critical_times, m.c, m.rate, m.shape, fallback=True)
        return OptimizeResult(res.c, m, res.eta, res.iterations, res.degenerate)
    c, it = _fixed_point(lambda c: two_tc_build(shape, rate, c, tc2), tol=tol, max_iter=max_iter)
    m = two_tc_build(shape, rate, c, tc2)
    return OptimizeResult(c, m, overlap_eta(m), it)


# --- prior-work baseline ---------------------------------------------------------

def c_leq_one_eta(shape: PulseShape, rate: float):
    """Largest ``c <= 1`` for which ``psi = c*phi`` is feasible everywhere.

    Feasibility of ``c*phi`` reads ``c^2 (|phi|^2 + 2R F(t)) <= 2R``; the
    efficiency is the plain overlap ``c^2``.  Returns ``(c, eta)``.
    """
    lo, hi = shape.window()

    def g(t):
        return np.abs(shape(t)) ** 2 + 2.0 * rate * shape.cdf(t)

    grid = np.linspace(lo, hi, SCAN_POINTS)
    vals = g(grid)
    i = int(np.argmax(vals))
    gmax = float(vals[i])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if b > a:
        r = optimize.minimize_scalar(lambda t: -float(g(t)), bounds=(a, b), method="bounded",
                                     options={"xatol": 1e-12 * shape.tau})
        gmax = max(gmax, -float(r.fun))
    c2 = min(1.0, 2.0 * rate / gmax)
    return math.sqrt(c2), c2


# --- drives ------------------------------------------------------------------------

class PostMode(str, enum.Enum):
    ZERO = "zero"
    DECOUPLE = "decouple"


@dataclass(frozen=True)
class Impulse:
    """Instantaneous rotation moving amplitude between S and ``target``.

    ``target`` is ``"P"`` (atom-limited drives) or ``"E"`` (cavity-limited
    drives, where the optical polarization is eliminated).
    """

    time: float
    area: float
    phase: float
    target: str = "P"


@dataclass(frozen=True, eq=False)
class ControlDrive:
    """Sampled control field plus events.

    Samples are grouped into blocks separated by the ``breaks`` times;
    interpolation never bridges a break.  Outside the blocks the drive is
    zero, except inside ``decouple`` intervals where the post-critical-time
    decoupling applies.
    """

    times: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    impulses: tuple = ()
    post_tc_mode: PostMode = PostMode.ZERO
    t1: float = 0.0
    t2: float = 1.0
    breaks: tuple = ()
    decouple: tuple = ()
    decouple_magnitude: float | None = None
    interpolation: str = "cubic"
    critical_times: tuple = ()
    meta: dict = field(default_factory=dict)

    def blocks(self):
        """Index ranges ``(i0, i1)`` of contiguous sample blocks."""
        t = self.times
        if t.size == 0:
            return []
        cuts = [0]
        for b in self.breaks:
            j = int(np.searchsorted(t, b, side="right"))
            if 0 < j < t.size and j not in cuts:
                cuts.append(j)
        cuts = sorted(cuts) + [t.size]
        return [(cuts[k], cuts[k + 1]) for k in range(len(cuts) - 1) if cuts[k + 1] > cuts[k]]

    def block_poly(self, i0, i1):
        """Piecewise-cubic coefficients ``(x, c)`` of one block."""
        x = self.times[i0:i1]
        y = self.omega[i0:i1]
        if x.size == 1:
            return np.array([x[0], x[0]]), np.zeros((4, 1), dtype=complex) + np.array([[0], [0], [0], [y[0]]])
        if self.interpolation == "linear" or x.size < 4:
            slope = np.diff(y) / np.diff(x)
            c = np.zeros((4, x.size - 1), dtype=complex)
            c[2] = slope
            c[3] = y[:-1]
            return x.astype(float), c
        cs = CubicSpline(x, y)
        return x.astype(float), np.ascontiguousarray(cs.c, dtype=complex)

    def __call__(self, t):
        """Interpolated drive (zero in gaps; decoupling intervals excluded)."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for i0, i1 in self.blocks():
            x, c = self.block_poly(i0, i1)
            m = (t >= x[0]) & (t <= x[-1])
            if np.any(m):
                from scipy.interpolate import PPoly
                out[m] = PPoly(c, x, extrapolate=False)(t[m])
        return out


def _cluster(a, b, n, eps, left, right):
    """Sampling grid on [a, b], refined geometrically toward singular ends."""
    a2 = a + eps if left else a
    b2 = b - eps if right else b
    if not b2 > a2:
        return np.array([])
    base = np.linspace(a2, b2, n)
    h = (b2 - a2) / (n - 1)
    extra = []
    if right:
        d = eps
        while d < 2 * h:
            extra.append(b - d)
            d *= 1.25
    if left:
        d = eps
        while d < 2 * h:
            extra.append(a + d)
            d *= 1.25
    pts = np.unique(np.concatenate([base, np.array(extra)]))
    return pts[(pts >= a2) & (pts <= b2)]


def _sample_blocks(m: RetrievalMap, n, eps):
    """Sampling blocks (array of times, singular_left, singular_right) for a map."""
    lo, hi = m.shape.window()
    if m.degenerate:
        return []
    blocks = []
    crit = m.critical_times
    if not crit:
        D_end = float(m.constraint(hi))
        blocks.append(_cluster(lo, hi, n, eps, False, D_end <= 1e-12 * m.rate))
    elif len(crit) == 1:
        blocks.append(_cluster(lo, crit[0], n, eps, False, True))
    else:
        blocks.append(_cluster(lo, crit[0], n, eps, False, True))
        D_end = float(m.constraint(hi))
        blocks.append(_cluster(crit[1], hi, n, eps, True, D_end <= 1e-12 * m.rate))
    return [b for b in blocks if b.size >= 2]


def _theta_path(t, rate_fn, theta0):
    from scipy.integrate import cumulative_simpson
    if t.size < 3:
        return theta0 + np.concatenate([[0.0], integrate.cumulative_trapezoid(rate_fn, t)])
    return theta0 + cumulative_simpson(rate_fn, x=t, initial=0.0)


def _onset_impulse(m: RetrievalMap, rate, target):
    if not math.isfinite(m.shape.t1):
        return None
    p1 = complex(m.psi(m.shape.t1))
    scale = math.sqrt(2.0 * rate)
    if abs(p1) <= 1e-14 * scale:
        return None
    s = min(1.0, abs(p1) / scale)
    area = math.acos(math.sqrt(max(0.0, 1.0 - s * s)))
    if target == "P":
        phase = math.atan2(p1.imag, p1.real) + math.pi     # P+ = -i psi1 / sqrt(2R)
    else:
        phase = math.atan2(p1.imag, p1.real) - 0.5 * math.pi  # E+ = psi1 / sqrt(2R)
    phase = math.remainder(phase, 2.0 * math.pi)
    return Impulse(float(m.shape.t1), area, phase, target)


def _resolvable(m, t):
    """Samples whose drive denominator is resolvable in double precision.

    Raises when the map truly violates the constraint; drops samples (only
    found in far tails, where the remaining weight is at round-off level)
    whose denominator is indistinguishable from zero.
    """
    den2 = m.constraint(t)
    floor = 2.0 * m.rate * 16.0 * np.finfo(float).eps + NOISE * np.abs(m.psi(t)) ** 2
    if np.any(den2 < -floor):
        bad = t[np.argmax(den2 < -floor)]
        raise ConstraintViolation(f"spin-wave population would be negative at t={bad!r}")
    return t[den2 > floor]


def synthesize_omega_atom(m: RetrievalMap, delta: float = 0.0, Gamma: float | None = None,
                          n_samples: int = SYNTH_POINTS) -> ControlDrive:
    """Control field reproducing ``psi`` in the atom-limited memory.

    ``Omega = -(psi' + (Gamma + i delta) psi) exp(-i theta) / den`` with
    ``den^2 = 2 Gamma (1 - int|psi|^2) - |psi|^2`` and
    ``theta' = (-Im(psi conj(psi')) + delta |psi|^2) / den^2``.
    The drive is zero after the critical time; an abrupt onset at ``t1`` is
    produced by an impulse.
    """
    Gamma = m.rate if Gamma is None else float(Gamma)
    if abs(Gamma - m.rate) > 1e-9 * m.rate:
        raise ValueError("map rate and Gamma differ")
    eps = EPS_EXCLUDE / Gamma
    times, omegas, thetas = [], [], []
    theta0 = 0.0
    for t in _sample_blocks(m, n_samples, eps):
        t = _resolvable(m, t)
        if t.size == 0:
            continue
        psi, dpsi = m.psi(t), m.psi_dot(t)
        den2 = m.constraint(t)
        th_rate = (-np.imag(psi * np.conj(dpsi)) + delta * np.abs(psi) ** 2) / den2
        theta = _theta_path(t, th_rate, theta0)
        theta0 = float(theta[-1])
        om = -(dpsi + (Gamma + 1j * delta) * psi) * np.exp(-1j * theta) / np.sqrt(den2)
        times.append(t)
        omegas.append(om)
        thetas.append(theta)
    imp = _onset_impulse(m, Gamma, "P")
    return _assemble(m, times, omegas, thetas, imp, PostMode.ZERO, None,
                     dict(regime="atom", rate=Gamma, delta=delta, c=m.c))


def synthesize_omega_cavity(m: RetrievalMap, params: MemoryParams, M: float = DECOUPLE_M,
                            n_samples: int = SYNTH_POINTS) -> ControlDrive:
    """Control field reproducing ``psi`` in the cavity-limited memory.

    With ``d = gamma + i delta`` and ``G = g sqrt(N)``::

        Omega = -(d psi' + (d kappa + G^2) psi) exp(-i theta) / (G den)
        theta' = (Im(psi conj(psi')) + delta |psi' + kappa psi|^2 / G^2) / den^2

    The phase law is the exact form of the general expression, which stays
    regular for ``gamma = delta = 0`` (where it reduces to the law implied by
    the single reduced spin-wave equation).  After the critical time the
    atoms are decoupled (``Omega >> G``).
    """
    kappa, G = params.kappa, params.g_sqrtN
    if abs(m.rate - kappa) > 1e-9 * kappa:
        raise ValueError("cavity-limited maps must use rate = kappa")
    if not G > 0:
        raise ValueError("cavity-limited synthesis needs g_sqrtN > 0")
    d = params.gamma + 1j * params.delta
    eps = EPS_EXCLUDE / kappa
    times, omegas, thetas = [], [], []
    theta0 = 0.0
    for t in _sample_blocks(m, n_samples, eps):
        t = _resolvable(m, t)
        if t.size == 0:
            continue
        psi, dpsi = m.psi(t), m.psi_dot(t)
        den2 = m.constraint(t)
        y = dpsi + kappa * psi
        th_rate = (np.imag(psi * np.conj(dpsi)) + params.delta * np.abs(y) ** 2 / G ** 2) / den2
        theta = _theta_path(t, th_rate, theta0)
        theta0 = float(theta[-1])
        om = -(d * dpsi + (d * kappa + G * G) * psi) * np.exp(-1j * theta) / (G * np.sqrt(den2))
        keep = slice(None)
        if not any(abs(tc - t[-1]) <= 10.0 * eps for tc in m.critical_times):
            # the drive of an unsaturated tail grows without bound; where it
            # exceeds the decoupling field the atoms are treated as decoupled
            weak = np.flatnonzero(np.abs(om) < M * G)
            if weak.size == 0:
                continue
            keep = slice(0, int(weak[-1]) + 1)
        times.append(t[keep])
        omegas.append(om[keep])
        thetas.append(theta[keep])
    imp = _onset_impulse(m, kappa, "E")
    return _assemble(m, times, omegas, thetas, imp, PostMode.DECOUPLE, M * G,
                     dict(regime="cavity", rate=kappa, delta=params.delta, c=m.c, M=M))


def _assemble(m, times, omegas, thetas, imp, mode, magnitude, meta):
    lo, hi = m.shape.window()
    t = np.concatenate(times) if times else np.array([])
    om = np.concatenate(omegas) if omegas else np.array([], dtype=complex)
    th = np.concatenate(thetas) if thetas else np.array([])
    crit = tuple(float(x) for x in m.critical_times)
    # gaps between sample blocks (and after the last block) carry the post mode
    gaps = []
    edges = [(b[0], b[-1]) for b in times]
    if not edges:
        gaps.append((lo, hi))
    else:
        for (a0, a1), (b0, b1) in zip(edges[:-1], edges[1:]):
            gaps.append((float(a1), float(b0)))
        if edges[-1][1] < hi:
            gaps.append((float(edges[-1][1]), hi))
    decouple = tuple(gaps) if mode is PostMode.DECOUPLE else ()
    return ControlDrive(
        times=t, omega=om, theta=th,
        impulses=(imp,) if imp is not None else (),
        post_tc_mode=mode, t1=float(lo), t2=float(hi),
        breaks=crit, decouple=decouple, decouple_magnitude=magnitude,
        interpolation="cubic", critical_times=crit, meta=meta,
    )


def adiabatic_omega(shape: PulseShape, Gamma: float, delta: float = 0.0,
                    n_samples: int = SYNTH_POINTS) -> ControlDrive:
    """Drive of the adiabatic limit (no critical time).

    ``Omega = -(Gamma + i delta)/sqrt(2 Gamma) * phi / sqrt(tail) * exp(-i theta)``
    where the accumulated phase ``theta = delta/(Gamma^2+delta^2) int |Omega|^2``
    has the closed form ``-delta ln(tail) / (2 Gamma)``.
    """
    lo, hi = shape.window()
    eps = EPS_EXCLUDE / Gamma
    right = float(shape.tail(hi)) <= 1e-15
    t = _cluster(lo, hi, n_samples, eps, False, right)
    tail = shape.tail(t)
    theta = -delta * np.log(tail) / (2.0 * Gamma)
    om = -(Gamma + 1j * delta) / math.sqrt(2.0 * Gamma) * shape(t) / np.sqrt(tail) * np.exp(-1j * theta)
    return ControlDrive(times=t, omega=om.astype(complex), theta=theta, t1=float(lo), t2=float(hi),
                        meta=dict(regime="adiabatic", rate=Gamma, delta=delta))


# --- export ------------------------------------------------------------------------

def write_drive(drive: ControlDrive, csv_path, json_path, argv=None):
    """CSV samples (t, Re, Im, theta) plus a JSON sidecar with events and modes."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# cavmem {__version__} control drive\n")
        if argv is not None:
            fh.write("# argv: " + " ".join(argv) + "\n")
        w = csv.writer(fh)
        w.writerow(["t", "re_omega", "im_omega", "theta"])
        for t, o, th in zip(drive.times, drive.omega, drive.theta):
            w.writerow([repr(float(t)), repr(float(o.real)), repr(float(o.imag)), repr(float(th))])
    side = dict(
        version=__version__,
        t1=drive.t1, t2=drive.t2,
        impulses=[asdict(i) for i in drive.impulses],
        post_tc_mode=drive.post_tc_mode.value,
        breaks=list(drive.breaks), decouple=[list(g) for g in drive.decouple],
        decouple_magnitude=drive.decouple_magnitude,
        interpolation=drive.interpolation,
        critical_times=list(drive.critical_times),
        meta=drive.meta,
    )
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2)


def read_drive(csv_path, json_path) -> ControlDrive:
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#") or rec[0] == "t":
                continue
            rows.append([float(v) for v in rec])
    arr = np.array(rows).reshape(-1, 4)
    with open(json_path, encoding="utf-8") as fh:
        side = json.load(fh)
    return ControlDrive(
        times=arr[:, 0], omega=arr[:, 1] + 1j * arr[:, 2], theta=arr[:, 3],
        impulses=tuple(Impulse(**i) for i in side["impulses"]),
        post_tc_mode=PostMode(side["post_tc_mode"]),
        t1=side["t1"], t2=side["t2"], breaks=tuple(side["breaks"]),
        decouple=tuple(tuple(g) for g in side["decouple"]),
        decouple_magnitude=side["decouple_magnitude"],
        interpolation=side["interpolation"],
        critical_times=tuple(side["critical_times"]), meta=side.get("meta", {}),
    )
