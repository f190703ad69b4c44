"""Forward simulation of storage and retrieval.

Three model tiers are available: the full cavity/polarization/spin-wave model,
the reduced model with the cavity eliminated (lossy or lossless), and the
reduced model with the polarization eliminated (with a separate path for
``gamma = delta = 0``, where only the spin wave remains dynamical).

The time axis is cut at every drive block edge, gap, impulse and input-field
edge; each piece has a constant tier and a smooth drive and is handed to the
adaptive Dormand-Prince kernel.  Impulses are applied between pieces as exact
rotations of ``(S, X)``, with ``X = P`` for atom-side impulses and ``X = E``
for cavity-side ones.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

from cavmem import __version__, kernels
from cavmem.control import ControlDrive, Impulse, PostMode
from cavmem.model import MemoryParams
from cavmem.shapes import PulseShape

RTOL = 1e-10
ATOL = 1e-12
INPUT_SAMPLES = 8001
HMAX_DIVISOR = 500.0  # keeps the cubic Hermite dense output well below 1e-9
_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)
_EMPTY_X = np.zeros(0)
_EMPTY_C = np.zeros((4, 0), dtype=complex)


class Tier(str, enum.Enum):
    FULL = "full"
    ATOM = "atom"
    ATOM_LOSSLESS = "atom-lossless"
    CAVITY = "cavity"
    CAVITY_SPECIAL = "cavity-special"


_LOSSLESS = {Tier.ATOM_LOSSLESS}


def kernel_params(params: MemoryParams, tier: Tier):
    """Parameter vector in the kernel layout."""
    p = np.zeros(kernels.NPARAM)
    G = params.g_sqrtN
    kappa = params.kappa
    p[0] = kappa
    p[1] = math.sqrt(2.0 * params.kappa_in)
    p[2] = G
    p[3] = params.gamma
    p[4] = params.delta
    if tier is Tier.ATOM:
        p[5] = params.gamma + G * G / kappa
        p[6] = p[8] = math.sqrt(2.0 * params.kappa_in) * G / kappa
        p[7] = (params.kappa_in - params.kappa_loss) / kappa
    elif tier is Tier.ATOM_LOSSLESS:
        Gamma = G * G / params.kappa_in
        p[0] = params.kappa_in
        p[3] = 0.0
        p[5] = Gamma
        p[6] = p[8] = math.sqrt(2.0 * Gamma)
        p[7] = 1.0
    return p


def _kernel_tier(tier):
    return {
        Tier.FULL: kernels.FULL,
        Tier.ATOM: kernels.ATOM,
        Tier.ATOM_LOSSLESS: kernels.ATOM,
        Tier.CAVITY: kernels.CAVITY,
        Tier.CAVITY_SPECIAL: kernels.CAVITY_SPECIAL,
    }[tier]


def resolve_tier(tier, params):
    """Coerce ``tier``; the cavity tier switches to its special path when gamma = delta = 0."""
    tier = Tier(tier)
    if tier is Tier.CAVITY and params.gamma == 0.0 and params.delta == 0.0:
        return Tier.CAVITY_SPECIAL
    return tier


# --- input fields ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InputField:
    """Incoming field as a piecewise cubic on ``[a, b]`` (zero elsewhere)."""

    x: np.ndarray
    c: np.ndarray

    @property
    def a(self):
        return float(self.x[0])

    @property
    def b(self):
        return float(self.x[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        m = (t >= self.a) & (t <= self.b)
        if np.any(m):
            out[m] = PPoly(self.c, self.x, extrapolate=False)(t[m])
        return out

    @classmethod
    def from_function(cls, fn, a, b, n=INPUT_SAMPLES):
        x = np.linspace(a, b, n)
        y = np.asarray(fn(x), dtype=complex)
        cs = CubicSpline(x, y)
        return cls(x, np.ascontiguousarray(cs.c, dtype=complex))

    @classmethod
    def from_shape(cls, shape: PulseShape, t1=None, t2=None, n=INPUT_SAMPLES):
        lo, hi = shape.window()
        a = lo if t1 is None else max(lo, t1)
        b = hi if t2 is None else min(hi, t2)
        return cls.from_function(shape, a, b, n)


def mirrored_input(shape: PulseShape, t1: float, t2: float, n=INPUT_SAMPLES) -> InputField:
    """Storage input ``phi_s(t) = conj(phi(t1 + t2 - t))`` on ``[t1, t2]``."""
    lo, hi = shape.window()
    a, b = max(lo, t1), min(hi, t2)
    fn = lambda t: np.conj(shape(t1 + t2 - t))
    return InputField.from_function(fn, t1 + t2 - b, t1 + t2 - a, n)


# --- trajectories ---------------------------------------------------------------

@dataclass(eq=False)
class _Piece:
    tier: int
    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    ox: np.ndarray
    oc: np.ndarray
    lost: float = 0.0


@dataclass(eq=False)
class Trajectory:
    """Simulation record.

    ``pieces`` keep the accepted integrator steps of each constant-tier
    interval so that quantities can be interpolated (cubic Hermite) without
    crossing impulses or drive discontinuities.
    """

    tier: Tier
    params: MemoryParams
    pvec: np.ndarray
    pieces: list
    ein: InputField | None
    S_init: complex
    input_norm: float = 0.0
    nfev: int = 0
    projection_loss: float = 0.0

    # stacked samples (duplicates at piece joins are kept: they carry the
    # values before and after an impulse)
    @property
    def grid(self):
        return np.concatenate([p.ts for p in self.pieces])

    def _col(self, i):
        return np.concatenate([p.ys[:, i] for p in self.pieces])

    @property
    def E(self):
        if self.tier is Tier.CAVITY_SPECIAL:
            return np.concatenate([_special_E(self.pvec, p, p.ts, p.ys) for p in self.pieces])
        if self.tier in (Tier.ATOM, Tier.ATOM_LOSSLESS):
            return None
        return self._col(0)

    @property
    def P(self):
        if self.tier in (Tier.CAVITY, Tier.CAVITY_SPECIAL):
            return None
        return self._col(1)

    @property
    def S(self):
        return self._col(2)

    @property
    def E_out(self):
        return np.concatenate([_eout(self.pvec, p, p.ts, p.ys, self.ein) for p in self.pieces])

    @property
    def emitted(self):
        """Running integral of ``|E_out|^2``."""
        return self._col(3).real

    @property
    def final(self):
        return self.pieces[-1].ys[-1]

    def input_weight(self, t):
        if self.ein is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return _input_cumulative(self.ein, t)

    def conservation_residual(self):
        """Excitation balance ``stored + emitted - absorbed - |S_init|^2`` per sample.

        Only meaningful for lossless parameters.  Weight discarded when the
        spin-wave-only tier projects onto its slaved manifold is counted as
        lost (it is reported in ``projection_loss``).
        """
        t = self.grid
        S = self.S
        stored = np.abs(S) ** 2
        if self.P is not None:
            stored = stored + np.abs(self.P) ** 2
        if self.E is not None:
            stored = stored + np.abs(self.E) ** 2
        lost = np.concatenate([np.full(p.ts.size, p.lost) for p in self.pieces])
        return stored + self.emitted + lost - self.input_weight(t) - abs(self.S_init) ** 2

    def loss_integral(self):
        return float(self.final[4].real)

    def write_csv(self, path, argv=None):
        t = self.grid
        cols = {"t": t}
        for name in ("E", "P", "S", "E_out"):
            v = getattr(self, name)
            if v is not None:
                cols["re_" + name] = v.real
                cols["im_" + name] = v.imag
        cols["emitted"] = self.emitted
        cols["residual"] = self.conservation_residual()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# cavmem {__version__} trajectory tier={self.tier.value}\n")
            if argv is not None:
                fh.write("# argv: " + " ".join(argv) + "\n")
            w = csv.writer(fh)
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([repr(float(v)) for v in row])


def _input_cumulative(ein: InputField, t):
    """``int_{-inf}^t |E_in|^2`` by 8-point Gauss-Legendre per spline interval."""
    x = ein.x
    a, b = x[:-1], x[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * _GL8_X
    vals = np.abs(ein(nodes.ravel()).reshape(nodes.shape)) ** 2
    cum = np.concatenate([[0.0], np.cumsum(vals @ _GL8_W * half)])
    t = np.clip(np.asarray(t, dtype=float), x[0], x[-1])
    i = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2)
    h = 0.5 * (t - x[i])
    nd = (x[i] + h)[..., None] + h[..., None] * _GL8_X
    part = (np.abs(ein(nd.ravel()).reshape(nd.shape)) ** 2) @ _GL8_W * h
    return cum[i] + part


def _drive_at(piece, t):
    if piece.ox.size < 2:
        return np.zeros_like(t, dtype=complex), np.zeros_like(t, dtype=complex)
    tt = np.clip(t, piece.ox[0], piece.ox[-1])
    pp = PPoly(piece.oc, piece.ox)
    return pp(tt), pp(tt, 1)


def _special_E(p, piece, t, y):
    if piece.tier == kernels.CAVITY_SPECIAL:
        w, _ = _drive_at(piece, t)
        return -w * y[:, 2] / p[2]
    return y[:, 0]


def _eout(p, piece, t, y, ein):
    e = ein(t) if ein is not None else np.zeros(t.shape, dtype=complex)
    k = piece.tier
    if k == kernels.ATOM:
        return p[7] * e + 1j * p[8] * y[:, 1]
    if k == kernels.CAVITY_SPECIAL:
        w, _ = _drive_at(piece, t)
        return -p[1] * w * y[:, 2] / p[2] - e
    return p[1] * y[:, 0] - e


def _hermite(piece, t):
    """Cubic Hermite interpolation of the state inside one piece."""
    ts, ys, fs = piece.ts, piece.ys, piece.fs
    i = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2)
    h = (ts[i + 1] - ts[i])[:, None]
    s = ((t - ts[i])[:, None]) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * ys[i] + h10 * h * fs[i] + h01 * ys[i + 1] + h11 * h * fs[i + 1]


def output_overlap(traj: Trajectory, target) -> complex:
    """``int conj(phi) E_out dt`` with 8-point Gauss-Legendre per accepted step."""
    if isinstance(target, PulseShape):
        lo, hi = target.t1, target.t2
    else:
        lo, hi = -math.inf, math.inf
    total = 0j
    for pc in traj.pieces:
        if pc.ts.size < 2:
            continue
        a = np.maximum(pc.ts[:-1], lo)
        b = np.minimum(pc.ts[1:], hi)
        ok = b > a
        if not np.any(ok):
            continue
        a, b = a[ok], b[ok]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = (mid[:, None] + half[:, None] * _GL8_X).ravel()
        y = _hermite(pc, nodes)
        eo = _eout(traj.pvec, pc, nodes, y, traj.ein)
        vals = (np.conj(target(nodes)) * eo).reshape(-1, 8)
        total += complex(np.sum(vals @ _GL8_W * half))
    return total


def overlap_efficiency(traj: Trajectory, target) -> float:
    """Retrieval efficiency ``|int conj(phi) E_out|^2 / |S(t1)|^2``."""
    return abs(output_overlap(traj, target)) ** 2 / abs(traj.S_init) ** 2


def loss_probability(traj: Trajectory, gamma: float | None = None) -> float:
    """Probability of spontaneous emission ``2 gamma int |P|^2``."""
    gamma = traj.params.gamma if gamma is None else gamma
    if traj.tier is Tier.ATOM_LOSSLESS:
        return 0.0
    return 2.0 * gamma * traj.loss_integral()


# --- the piecewise driver ---------------------------------------------------------

def _in_intervals(t, intervals):
    return any(a <= t <= b for a, b in intervals)


def _poly_value(x, c, t):
    t = np.asarray(t, dtype=float)
    if x.size < 2:
        return np.zeros(t.shape, dtype=complex)
    return PPoly(c, x)(np.clip(t, x[0], x[-1]))


def _project_special(y, w, G):
    """Project ``(S, E)`` onto the manifold ``G E + Omega S = 0``.

    Needed whenever the spin-wave-only tier starts with a drive value the
    current state is not slaved to (abrupt switch-on).  Returns the new state
    and the discarded weight.
    """
    w = complex(w)
    S, E = y[2], y[0]
    n2 = G * G + abs(w) ** 2
    before = abs(S) ** 2 + abs(E) ** 2
    S_new = G * (G * S - w.conjugate() * E) / n2
    y = y.copy()
    y[2] = S_new
    y[0] = -w * S_new / G
    return y, before - abs(S_new) ** 2 - abs(y[0]) ** 2


def _apply_impulse(y, imp: Impulse, tier):
    c, s = math.cos(imp.area), math.sin(imp.area)
    ph = complex(math.cos(imp.phase), math.sin(imp.phase))
    S = y[2]
    if imp.target == "E":
        X = y[0]
        y[2] = c * S + 1j * ph.conjugate() * s * X
        y[0] = 1j * ph * s * S + c * X
    else:
        X = y[1]
        y[2] = c * S + 1j * ph.conjugate() * s * X
        y[1] = 1j * ph * s * S + c * X
    return y


def _simulate(drive: ControlDrive, params: MemoryParams, tier, t1, t2, y0, ein: InputField | None,
              decouple="exact", rtol=RTOL, atol=ATOL, hmax=None, max_steps=2_000_000,
              knot_stops=True):
    if decouple not in ("exact", "finite"):
        raise ValueError("decouple must be 'exact' or 'finite'")
    tier = resolve_tier(tier, params)
    if tier is Tier.CAVITY_SPECIAL and not params.g_sqrtN > 0:
        raise ValueError("cavity-limited simulation needs g_sqrtN > 0")
    pvec = kernel_params(params, tier)
    ktier = _kernel_tier(tier)
    t1 = drive.t1 if t1 is None else float(t1)
    t2 = drive.t2 if t2 is None else float(t2)
    blocks = drive.blocks()
    polys = [drive.block_poly(i0, i1) for i0, i1 in blocks]
    cuts = {t1, t2}
    for x, _ in polys:
        cuts.update((float(x[0]), float(x[-1])))
    for g in drive.decouple:
        cuts.update(g)
    for imp in drive.impulses:
        cuts.add(float(imp.time))
    if ein is not None:
        cuts.update((ein.a, ein.b))
    cuts = sorted(c for c in cuts if t1 <= c <= t2)
    pending = sorted(drive.impulses, key=lambda i: i.time)
    for imp in pending:
        if not t1 <= imp.time <= t2:
            raise ValueError(f"impulse at {imp.time} outside [{t1}, {t2}]")
    y = np.array(y0, dtype=complex)
    pieces = []
    nfev = 0
    projection_loss = 0.0
    span = t2 - t1
    hmax = span / HMAX_DIVISOR if hmax is None else hmax
    k_imp = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        while k_imp < len(pending) and pending[k_imp].time <= a:
            y = _apply_impulse(y, pending[k_imp], ktier)
            k_imp += 1
        mid = 0.5 * (a + b)
        ox, oc = _EMPTY_X, _EMPTY_C
        for x, c in polys:
            if x[0] <= mid <= x[-1]:
                ox, oc = x, c
                break
        kt = ktier
        if drive.post_tc_mode is PostMode.DECOUPLE and _in_intervals(mid, drive.decouple):
            if tier in (Tier.CAVITY, Tier.CAVITY_SPECIAL) or (tier is Tier.FULL and decouple == "exact"):
                kt = kernels.DECOUPLED
            elif tier is Tier.FULL:
                mag = drive.decouple_magnitude
                ox = np.array([a, b])
                oc = np.zeros((4, 1), dtype=complex)
                oc[3, 0] = mag
        if kt == kernels.DECOUPLED and tier in (Tier.ATOM, Tier.ATOM_LOSSLESS):
            kt = ktier
        ex, ec = (ein.x, ein.c) if (ein is not None and ein.a <= mid <= ein.b) else (_EMPTY_X, _EMPTY_C)
        if kt == kernels.CAVITY_SPECIAL:
            y, lost = _project_special(y, _poly_value(ox, oc, a), pvec[2])
            projection_loss += lost
        ts, ys, fs, nf = kernels.integrate(kt, a, b, y, pvec, ox, oc, ex, ec,
                                           rtol, atol, 0.0, hmax, max_steps,
                                           knot_stops)
        nfev += nf
        if kt == kernels.CAVITY_SPECIAL:
            ys[:, 0] = -_poly_value(ox, oc, ts) * ys[:, 2] / pvec[2]
        pieces.append(_Piece(kt, ts, ys, fs, ox, oc, projection_loss))
        y = ys[-1].copy()
    while k_imp < len(pending):
        y = _apply_impulse(y, pending[k_imp], ktier)
        k_imp += 1
        last = pieces[-1]
        f = last.fs[-1:]
        pieces.append(_Piece(last.tier, np.array([t2]), y[None, :].copy(), f, last.ox, last.oc,
                             projection_loss))
    traj = Trajectory(tier, params, pvec, pieces, ein, complex(y0[2]), nfev=nfev,
                      projection_loss=projection_loss)
    if ein is not None:
        traj.input_norm = float(_input_cumulative(ein, ein.b))
    return traj


def simulate_retrieval(drive: ControlDrive, params: MemoryParams, tier, t1=None, t2=None,
                       S_init: complex = 1.0, **kw) -> Trajectory:
    """Retrieval from an initial spin wave ``S_init`` with no input field."""
    if abs(S_init) > 1.0 + 1e-12 or S_init == 0:
        raise ValueError("need 0 < |S_init| <= 1")
    y0 = np.zeros(kernels.NSTATE, dtype=complex)
    y0[2] = S_init
    return _simulate(drive, params, tier, t1, t2, y0, None, **kw)


def simulate_storage(drive: ControlDrive, phi_in, params: MemoryParams, tier,
                     t1=None, t2=None, **kw):
    """Storage of ``phi_in`` (PulseShape or InputField) starting from the ground state.

    Returns ``(trajectory, eta_s)`` with ``eta_s = |S(t2)|^2 / int |E_in|^2``.
    """
    t1 = drive.t1 if t1 is None else float(t1)
    t2 = drive.t2 if t2 is None else float(t2)
    ein = phi_in if isinstance(phi_in, InputField) else InputField.from_shape(phi_in, t1, t2)
    y0 = np.zeros(kernels.NSTATE, dtype=complex)
    traj = _simulate(drive, params, tier, t1, t2, y0, ein, **kw)
    eta = abs(traj.final[2]) ** 2 / traj.input_norm
    return traj, float(eta)


def time_reverse_drive(drive: ControlDrive, t1=None, t2=None) -> ControlDrive:
    """Drive ``conj(Omega(t1 + t2 - t))`` with mirrored events."""
    t1 = drive.t1 if t1 is None else float(t1)
    t2 = drive.t2 if t2 is None else float(t2)
    s = t1 + t2
    mirror = lambda t: s - t
    imps = tuple(sorted((replace(i, time=mirror(i.time), phase=-i.phase) for i in drive.impulses),
                        key=lambda i: i.time))
    return replace(
        drive,
        times=mirror(drive.times[::-1]),
        omega=np.conj(drive.omega[::-1]),
        theta=-drive.theta[::-1],
        impulses=imps,
        t1=t1, t2=t2,
        breaks=tuple(sorted(mirror(b) for b in drive.breaks)),
        decouple=tuple(sorted((mirror(b), mirror(a)) for a, b in drive.decouple)),
        critical_times=tuple(sorted(mirror(b) for b in drive.critical_times)),
    )


def adiabatic_validity(drive: ControlDrive, params: MemoryParams, reduced_tier, target: PulseShape,
                       t1=None, t2=None):
    """Efficiency of one drive in a reduced tier and in the full model.

    The predicted gap scale is ``1/(kappa tau)`` for atom-limited drives and
    ``(1 + 1/(kappa tau)) / (Gamma tau)`` for cavity-limited ones.
    """
    red = simulate_retrieval(drive, params, reduced_tier, t1, t2)
    full = simulate_retrieval(drive, params, Tier.FULL, t1, t2)
    er = overlap_efficiency(red, target)
    ef = overlap_efficiency(full, target)
    tau = target.tau
    rt = resolve_tier(reduced_tier, params)
    if rt in (Tier.ATOM, Tier.ATOM_LOSSLESS):
        predicted = 1.0 / (params.kappa * tau)
    else:
        Gamma = params.g_sqrtN ** 2 / params.kappa_in
        predicted = (1.0 + 1.0 / (params.kappa * tau)) / (Gamma * tau)
    return dict(eta_reduced=er, eta_full=ef, gap=abs(er - ef), predicted=predicted)


def constant_drive(value, t1, t2) -> ControlDrive:
    """Constant drive on ``[t1, t2]`` (linear two-point table)."""
    return ControlDrive(times=np.array([t1, t2], dtype=float),
                        omega=np.full(2, value, dtype=complex),
                        theta=np.zeros(2), t1=float(t1), t2=float(t2), interpolation="linear")
