"""Pure-Python integration kernels.

Same signatures and arithmetic as the compiled ``_ckernels`` extension.  The
package selects this module when the extension is missing or when the
environment variable ``CAVMEM_PURE_PYTHON=1`` is set.

State layout shared by both backends (complex slots)::

    y[0] = E   cavity field
    y[1] = P   optical polarization
    y[2] = S   spin wave
    y[3] = running integral of |E_out|^2
    y[4] = running integral of |P|^2

Drives and input fields are passed as piecewise cubics ``(x, c)`` in the
scipy ``PPoly`` layout: ``value = sum_k c[k, i] * (t - x[i])**(3 - k)``.
An empty breakpoint array means "identically zero".
"""
import bisect
import math

import numpy as np

FULL, ATOM, CAVITY, CAVITY_SPECIAL, DECOUPLED = 0, 1, 2, 3, 4
NSTATE = 5

# parameter vector layout
KAPPA, SQ2KIN, G, GAMMA, DELTA, DECAY, A_IN, DIRECT, B_OUT = range(9)
NPARAM = 9

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


class _Poly:
    """Scalar evaluator for a piecewise cubic, clamped to its breakpoints."""

    def __init__(self, x, c):
        self.x = [float(v) for v in x]
        self.m = len(self.x) - 1
        if self.m >= 1:
            c = np.asarray(c, dtype=complex)
            self.c = [list(map(complex, row)) for row in c]

    def __call__(self, t):
        m = self.m
        if m < 1:
            return 0j, 0j
        x = self.x
        if t <= x[0]:
            i, s = 0, 0.0
        elif t >= x[m]:
            i = m - 1
            s = x[m] - x[i]
        else:
            i = bisect.bisect_right(x, t) - 1
            s = t - x[i]
        c = self.c
        c0, c1, c2, c3 = c[0][i], c[1][i], c[2][i], c[3][i]
        return ((c0 * s + c1) * s + c2) * s + c3, (3.0 * c0 * s + 2.0 * c1) * s + c2


def _rhs(tier, t, y, p, om, ein):
    E, P, S = y[0], y[1], y[2]
    w, dw = om(t)
    e, _ = ein(t)
    if tier == FULL:
        eo = p[SQ2KIN] * E - e
        dE = -p[KAPPA] * E + 1j * p[G] * P + p[SQ2KIN] * e
        dP = -(p[GAMMA] + 1j * p[DELTA]) * P + 1j * p[G] * E + 1j * w * S
        dS = 1j * w.conjugate() * P
        pp = P
    elif tier == ATOM:
        eo = p[DIRECT] * e + 1j * p[B_OUT] * P
        dE = 0j
        dP = -(p[DECAY] + 1j * p[DELTA]) * P + 1j * w * S + 1j * p[A_IN] * e
        dS = 1j * w.conjugate() * P
        pp = P
    elif tier == CAVITY:
        den = p[GAMMA] + 1j * p[DELTA]
        g = p[G]
        eo = p[SQ2KIN] * E - e
        dE = -(p[KAPPA] + g * g / den) * E - g * w * S / den + p[SQ2KIN] * e
        dP = 0j
        dS = -(w * w.conjugate()) * S / den - g * w.conjugate() * E / den
        pp = 1j * (g * E + w * S) / den
    elif tier == CAVITY_SPECIAL:
        g = p[G]
        a2 = (w * w.conjugate()).real
        wden = g * g + a2
        eo = -p[SQ2KIN] * w * S / g - e
        dE = 0j
        dP = 0j
        dS = -(dw * w.conjugate() + p[KAPPA] * a2) / wden * S - p[SQ2KIN] * g * w.conjugate() / wden * e
        pp = 0j
    else:  # DECOUPLED: bare cavity decay, atoms frozen
        eo = p[SQ2KIN] * E - e
        dE = -p[KAPPA] * E + p[SQ2KIN] * e
        dP = 0j
        dS = 0j
        pp = 0j
    return [dE, dP, dS, complex(abs(eo) ** 2), complex(abs(pp) ** 2)]


def integrate(tier, t0, t_end, y0, params, ox, oc, ex, ec,
              rtol=1e-10, atol=1e-12, h0=0.0, hmax=0.0, max_steps=2_000_000,
              knot_stops=False):
    """Adaptive Dormand-Prince integration of one constant-tier segment.

    Returns ``(ts, ys, fs, nfev)`` with every accepted step; ``fs`` holds the
    right-hand side at each stored point (enough for cubic Hermite dense
    output).  With ``knot_stops`` no step crosses a drive breakpoint, which
    keeps the error estimate honest when the drive derivative enters the
    right-hand side.
    """
    tier = int(tier)
    p = [float(v) for v in params]
    om = _Poly(ox, oc)
    ein = _Poly(ex, ec)
    span = t_end - t0
    y = [complex(v) for v in y0]
    ts, ys, fs = [t0], [list(y)], []
    if span <= 0.0:
        f = _rhs(tier, t0, y, p, om, ein)
        return np.array(ts), np.array(ys, dtype=complex), np.array([f], dtype=complex), 1
    if hmax <= 0.0:
        hmax = span
    f = _rhs(tier, t0, y, p, om, ein)
    nfev = 1
    fs.append(f)
    if h0 <= 0.0:
        d0 = math.sqrt(sum((abs(v) / (atol + rtol * abs(v))) ** 2 for v in y) / NSTATE)
        d1 = math.sqrt(sum((abs(v) / (atol + rtol * abs(w))) ** 2 for v, w in zip(f, y)) / NSTATE)
        h = 0.01 * d0 / d1 if (d0 > 1e-5 and d1 > 1e-5) else 1e-6 * span
        h = min(h, hmax, span)
    else:
        h = min(h0, hmax, span)
    t = t0
    rejected = False
    steps = 0
    kn = 0
    while t < t_end:
        if t + 1.01 * h >= t_end:
            h = t_end - t
        t_next = t + h
        h_prop = h
        clipped = False
        if knot_stops and om.m >= 1:
            tiny = 1e-13 * max(abs(t), span)
            while kn <= om.m and om.x[kn] <= t + tiny:
                kn += 1
            if kn <= om.m and om.x[kn] < t_next and om.x[kn] < t_end:
                h = om.x[kn] - t
                t_next = om.x[kn]
                clipped = True
        k = [f]
        for s in range(1, 7):
            a = _A[s]
            ytmp = [y[i] + h * sum(a[j] * k[j][i] for j in range(s)) for i in range(NSTATE)]
            ts_ = t + _C[s] * h if s < 5 else t + h
            k.append(_rhs(tier, ts_, ytmp, p, om, ein))
        nfev += 6
        ynew = ytmp  # stage 7 argument equals the 5th-order solution (FSAL)
        err = 0.0
        for i in range(NSTATE):
            e = h * sum(_E[j] * k[j][i] for j in range(7))
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (abs(e) / sc) ** 2
        err = math.sqrt(err / NSTATE)
        if err <= 1.0:
            t = t_end if h == t_end - t else t_next
            y = ynew
            f = k[6]
            ts.append(t)
            ys.append(list(y))
            fs.append(f)
            fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
            if rejected:
                fac = min(fac, 1.0)
            h = min(h * fac, hmax)
            if clipped:
                h = min(max(h, h_prop), hmax)
            rejected = False
            steps += 1
            if steps > max_steps:
                raise RuntimeError(f"step budget exhausted at t={t!r}")
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
            rejected = True
        if h < 1e-14 * max(abs(t), span):
            raise RuntimeError(f"step-size collapse at t={t!r}")
    return (np.array(ts), np.array(ys, dtype=complex), np.array(fs, dtype=complex), nfev)


def rk4_storage(omega, ein, h, gamma, delta):
    """Fixed-step RK4 storage in the lossless atom-limited model, batched.

    ``omega`` has shape ``(B, 2K+1)`` holding the drive at step starts,
    midpoints and ends (interleaved); ``ein`` has shape ``(2K+1,)``.
    Returns the final spin wave ``S`` for each batch member.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=complex))
    ein = np.asarray(ein, dtype=complex)
    h = np.asarray(h, dtype=float)
    nb = omega.shape[0]
    d = gamma + 1j * delta
    a = 1j * math.sqrt(2.0 * gamma)
    P = np.zeros(nb, dtype=complex)
    S = np.zeros(nb, dtype=complex)
    oc = np.conj(omega)
    for k in range(len(h)):
        hk = h[k]
        j = 2 * k
        o1, om, o2 = omega[:, j], omega[:, j + 1], omega[:, j + 2]
        c1, cm, c2 = oc[:, j], oc[:, j + 1], oc[:, j + 2]
        e1, em, e2 = a * ein[j], a * ein[j + 1], a * ein[j + 2]
        kp1 = -d * P + 1j * o1 * S + e1
        ks1 = 1j * c1 * P
        p2 = P + 0.5 * hk * kp1
        s2 = S + 0.5 * hk * ks1
        kp2 = -d * p2 + 1j * om * s2 + em
        ks2 = 1j * cm * p2
        p3 = P + 0.5 * hk * kp2
        s3 = S + 0.5 * hk * ks2
        kp3 = -d * p3 + 1j * om * s3 + em
        ks3 = 1j * cm * p3
        p4 = P + hk * kp3
        s4 = S + hk * ks3
        kp4 = -d * p4 + 1j * o2 * s4 + e2
        ks4 = 1j * c2 * p4
        P = P + hk / 6.0 * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
        S = S + hk / 6.0 * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4)
    return S


def rk4_storage_grad(omega, ein, h, gamma, delta):
    """Objective ``|S(t2)|^2`` and its exact discrete gradient.

    Reverse-mode differentiation of the RK4 map used by :func:`rk4_storage`.
    Returns ``(J, grad)`` where ``grad[i] = dJ/dRe(omega[i]) + 1j*dJ/dIm(omega[i])``.
    """
    omega = [complex(v) for v in np.asarray(omega, dtype=complex).ravel()]
    ein = [complex(v) for v in np.asarray(ein, dtype=complex)]
    h = [float(v) for v in h]
    K = len(h)
    d = complex(gamma, delta)
    dc = d.conjugate()
    a = 1j * math.sqrt(2.0 * gamma)

    def f(P, S, w, e):
        return -d * P + 1j * w * S + e, 1j * w.conjugate() * P

    Ps = [0j] * (K + 1)
    Ss = [0j] * (K + 1)
    P = S = 0j
    for k in range(K):
        hk = h[k]
        j = 2 * k
        o1, om, o2 = omega[j], omega[j + 1], omega[j + 2]
        e1, em, e2 = a * ein[j], a * ein[j + 1], a * ein[j + 2]
        kp1, ks1 = f(P, S, o1, e1)
        kp2, ks2 = f(P + 0.5 * hk * kp1, S + 0.5 * hk * ks1, om, em)
        kp3, ks3 = f(P + 0.5 * hk * kp2, S + 0.5 * hk * ks2, om, em)
        kp4, ks4 = f(P + hk * kp3, S + hk * ks3, o2, e2)
        P = P + hk / 6.0 * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
        S = S + hk / 6.0 * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4)
        Ps[k + 1] = P
        Ss[k + 1] = S
    J = abs(S) ** 2
    grad = [0j] * len(omega)
    bP, bS = 0j, 2.0 * S
    for k in range(K - 1, -1, -1):
        hk = h[k]
        j = 2 * k
        o1, om, o2 = omega[j], omega[j + 1], omega[j + 2]
        e1, em, e2 = a * ein[j], a * ein[j + 1], a * ein[j + 2]
        P1, S1 = Ps[k], Ss[k]
        kp1, ks1 = f(P1, S1, o1, e1)
        P2, S2 = P1 + 0.5 * hk * kp1, S1 + 0.5 * hk * ks1
        kp2, ks2 = f(P2, S2, om, em)
        P3, S3 = P1 + 0.5 * hk * kp2, S1 + 0.5 * hk * ks2
        kp3, ks3 = f(P3, S3, om, em)
        P4, S4 = P1 + hk * kp3, S1 + hk * ks3
        w6, w3 = hk / 6.0, hk / 3.0
        b1P, b1S = w6 * bP, w6 * bS
        b2P, b2S = w3 * bP, w3 * bS
        b3P, b3S = w3 * bP, w3 * bS
        b4P, b4S = w6 * bP, w6 * bS
        yP, yS = bP, bS
        # stage 4
        zP = -dc * b4P - 1j * o2 * b4S
        zS = -1j * o2.conjugate() * b4P
        grad[j + 2] += -1j * b4P * S4.conjugate() + 1j * b4S.conjugate() * P4
        yP += zP; yS += zS
        b3P += hk * zP; b3S += hk * zS
        # stage 3
        zP = -dc * b3P - 1j * om * b3S
        zS = -1j * om.conjugate() * b3P
        grad[j + 1] += -1j * b3P * S3.conjugate() + 1j * b3S.conjugate() * P3
        yP += zP; yS += zS
        b2P += 0.5 * hk * zP; b2S += 0.5 * hk * zS
        # stage 2
        zP = -dc * b2P - 1j * om * b2S
        zS = -1j * om.conjugate() * b2P
        grad[j + 1] += -1j * b2P * S2.conjugate() + 1j * b2S.conjugate() * P2
        yP += zP; yS += zS
        b1P += 0.5 * hk * zP; b1S += 0.5 * hk * zS
        # stage 1
        zP = -dc * b1P - 1j * o1 * b1S
        zS = -1j * o1.conjugate() * b1P
        grad[j] += -1j * b1P * S1.conjugate() + 1j * b1S.conjugate() * P1
        bP, bS = yP + zP, yS + zS
    return J, np.array(grad, dtype=complex)
