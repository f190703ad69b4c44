# cython: language_level=3
"""Compiled integration kernels (see ``_pykernels`` for the reference)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow

cnp.import_array()

cdef enum:
    NS = 5

cdef int FULL = 0
cdef int ATOM = 1
cdef int CAVITY = 2
cdef int CAVITY_SPECIAL = 3
cdef int DECOUPLED = 4

cdef double[7] RC = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7][6] RA = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40, 9.0 / 40, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0.0, 0.0, 0.0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0.0, 0.0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0.0],
    [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
]
cdef double[7] RE = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920,
                     -17253.0 / 339200, 22.0 / 525, -1.0 / 40]


cdef inline double cabs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline double cabs(double complex z) nogil:
    return sqrt(z.real * z.real + z.imag * z.imag)


cdef inline double complex conj(double complex z) nogil:
    return z.real - 1j * z.imag


cdef struct Poly:
    int m
    double *x
    double complex *c   # row-major (4, m)
    int hint


cdef inline void poly_eval(Poly *q, double t, double complex *val, double complex *der) nogil:
    cdef int m = q.m
    cdef int i
    cdef double s
    cdef double complex c0, c1, c2, c3
    if m < 1:
        val[0] = 0
        der[0] = 0
        return
    if t <= q.x[0]:
        i = 0
        s = 0.0
    elif t >= q.x[m]:
        i = m - 1
        s = q.x[m] - q.x[i]
    else:
        i = q.hint
        if i < 0 or i >= m:
            i = 0
        while i > 0 and t < q.x[i]:
            i -= 1
        while i < m - 1 and t >= q.x[i + 1]:
            i += 1
        s = t - q.x[i]
    q.hint = i
    c0 = q.c[i]
    c1 = q.c[m + i]
    c2 = q.c[2 * m + i]
    c3 = q.c[3 * m + i]
    val[0] = ((c0 * s + c1) * s + c2) * s + c3
    der[0] = (3.0 * c0 * s + 2.0 * c1) * s + c2


cdef void rhs(int tier, double t, double complex *y, double *p, Poly *om, Poly *ein,
              double complex *out) nogil:
    cdef double complex E = y[0], P = y[1], S = y[2]
    cdef double complex w, dw, e, de, eo, pp, den
    cdef double g, a2, wden
    poly_eval(om, t, &w, &dw)
    poly_eval(ein, t, &e, &de)
    if tier == FULL:
        eo = p[1] * E - e
        out[0] = -p[0] * E + 1j * p[2] * P + p[1] * e
        out[1] = -(p[3] + 1j * p[4]) * P + 1j * p[2] * E + 1j * w * S
        out[2] = 1j * conj(w) * P
        pp = P
    elif tier == ATOM:
        eo = p[7] * e + 1j * p[8] * P
        out[0] = 0
        out[1] = -(p[5] + 1j * p[4]) * P + 1j * w * S + 1j * p[6] * e
        out[2] = 1j * conj(w) * P
        pp = P
    elif tier == CAVITY:
        den = p[3] + 1j * p[4]
        g = p[2]
        eo = p[1] * E - e
        out[0] = -(p[0] + g * g / den) * E - g * w * S / den + p[1] * e
        out[1] = 0
        out[2] = -cabs2(w) * S / den - g * conj(w) * E / den
        pp = 1j * (g * E + w * S) / den
    elif tier == CAVITY_SPECIAL:
        g = p[2]
        a2 = cabs2(w)
        wden = g * g + a2
        eo = -p[1] * w * S / g - e
        out[0] = 0
        out[1] = 0
        out[2] = -(dw * conj(w) + p[0] * a2) / wden * S - p[1] * g * conj(w) / wden * e
        pp = 0
    else:
        eo = p[1] * E - e
        out[0] = -p[0] * E + p[1] * e
        out[1] = 0
        out[2] = 0
        pp = 0
    out[3] = cabs2(eo)
    out[4] = cabs2(pp)


cdef Poly make_poly(cnp.ndarray[double, ndim=1] x, cnp.ndarray[double complex, ndim=2] c):
    cdef Poly q
    q.m = x.shape[0] - 1
    q.hint = 0
    if q.m >= 1:
        q.x = <double *> x.data
        q.c = <double complex *> c.data
    else:
        q.m = 0
        q.x = NULL
        q.c = NULL
    return q


def integrate(int tier, double t0, double t_end, y0, params, ox, oc, ex, ec,
              double rtol=1e-10, double atol=1e-12, double h0=0.0, double hmax=0.0,
              long max_steps=2_000_000, bint knot_stops=False):
    """Adaptive Dormand-Prince integration of one constant-tier segment."""
    cdef cnp.ndarray[double, ndim=1] pa = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] oxa = np.ascontiguousarray(ox, dtype=np.float64).ravel()
    cdef cnp.ndarray[double complex, ndim=2] oca = np.ascontiguousarray(
        np.asarray(oc, dtype=np.complex128).reshape(4, -1) if oxa.shape[0] > 1 else np.zeros((4, 1), dtype=np.complex128))
    cdef cnp.ndarray[double, ndim=1] exa = np.ascontiguousarray(ex, dtype=np.float64).ravel()
    cdef cnp.ndarray[double complex, ndim=2] eca = np.ascontiguousarray(
        np.asarray(ec, dtype=np.complex128).reshape(4, -1) if exa.shape[0] > 1 else np.zeros((4, 1), dtype=np.complex128))
    cdef Poly om = make_poly(oxa, oca)
    cdef Poly ein = make_poly(exa, eca)
    cdef double *p = <double *> pa.data

    cdef double complex y[NS]
    cdef double complex ynew[NS]
    cdef double complex ytmp[NS]
    cdef double complex k[7][NS]
    cdef double complex acc, errc
    cdef int i, j, s
    cdef double span = t_end - t0
    cdef double t = t0, h, err, sc, fac, d0, d1, ts_
    cdef long steps = 0, nfev = 0, cap = 256, n = 0
    cdef bint rejected = False
    cdef bint clipped
    cdef int kn = 0
    cdef double t_next, h_prop, tiny

    y0a = np.asarray(y0, dtype=np.complex128)
    for i in range(NS):
        y[i] = y0a[i]

    ts = np.empty(cap, dtype=np.float64)
    ys = np.empty((cap, NS), dtype=np.complex128)
    fs = np.empty((cap, NS), dtype=np.complex128)
    cdef double[:] tv = ts
    cdef double complex[:, :] yv = ys
    cdef double complex[:, :] fv = fs

    rhs(tier, t, y, p, &om, &ein, k[0])
    nfev = 1
    tv[0] = t
    for i in range(NS):
        yv[0, i] = y[i]
        fv[0, i] = k[0][i]
    n = 1
    if span <= 0.0:
        return ts[:1].copy(), ys[:1].copy(), fs[:1].copy(), nfev
    if hmax <= 0.0:
        hmax = span
    if h0 <= 0.0:
        d0 = 0.0
        d1 = 0.0
        for i in range(NS):
            sc = atol + rtol * cabs(y[i])
            d0 += (cabs(y[i]) / sc) ** 2
            d1 += (cabs(k[0][i]) / sc) ** 2
        d0 = sqrt(d0 / NS)
        d1 = sqrt(d1 / NS)
        if d0 > 1e-5 and d1 > 1e-5:
            h = 0.01 * d0 / d1
        else:
            h = 1e-6 * span
        h = min(h, hmax, span)
    else:
        h = min(h0, hmax, span)

    while t < t_end:
        if t + 1.01 * h >= t_end:
            h = t_end - t
        t_next = t + h
        h_prop = h
        clipped = False
        if knot_stops and om.m >= 1:
            # never step across a breakpoint of the drive
            tiny = 1e-13 * max(fabs(t), span)
            while kn <= om.m and om.x[kn] <= t + tiny:
                kn += 1
            if kn <= om.m and om.x[kn] < t_next and om.x[kn] < t_end:
                h = om.x[kn] - t
                t_next = om.x[kn]
                clipped = True
        for s in range(1, 7):
            for i in range(NS):
                acc = 0
                for j in range(s):
                    acc = acc + RA[s][j] * k[j][i]
                ytmp[i] = y[i] + h * acc
            if s < 5:
                ts_ = t + RC[s] * h
            else:
                ts_ = t + h
            rhs(tier, ts_, ytmp, p, &om, &ein, k[s])
        nfev += 6
        err = 0.0
        for i in range(NS):
            ynew[i] = ytmp[i]
            errc = 0
            for j in range(7):
                errc = errc + RE[j] * k[j][i]
            errc = h * errc
            sc = atol + rtol * max(cabs(y[i]), cabs(ynew[i]))
            err += (cabs(errc) / sc) ** 2
        err = sqrt(err / NS)
        if err <= 1.0:
            if h == t_end - t:
                t = t_end
            else:
                t = t_next
            for i in range(NS):
                y[i] = ynew[i]
                k[0][i] = k[6][i]
            if n >= cap:
                cap *= 2
                ts = np.resize(ts, cap)
                ys = np.resize(ys, (cap, NS))
                fs = np.resize(fs, (cap, NS))
                tv = ts
                yv = ys
                fv = fs
            tv[n] = t
            for i in range(NS):
                yv[n, i] = y[i]
                fv[n, i] = k[0][i]
            n += 1
            if err == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, max(0.2, 0.9 * pow(err, -0.2)))
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
            h *= max(0.2, 0.9 * pow(err, -0.2))
            rejected = True
        if h < 1e-14 * max(fabs(t), span):
            raise RuntimeError(f"step-size collapse at t={t!r}")
    return ts[:n].copy(), ys[:n].copy(), fs[:n].copy(), nfev


def rk4_storage(omega, ein, h, double gamma, double delta):
    """Fixed-step RK4 storage in the lossless atom-limited model, batched."""
    cdef cnp.ndarray[double complex, ndim=2] oma = np.ascontiguousarray(
        np.atleast_2d(np.asarray(omega, dtype=np.complex128)))
    cdef double complex[:] ev = np.ascontiguousarray(ein, dtype=np.complex128)
    cdef double[:] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef double complex[:, :] ov = oma
    cdef Py_ssize_t nb = oma.shape[0], K = hv.shape[0], b, kk, j
    out = np.empty(nb, dtype=np.complex128)
    cdef double complex[:] outv = out
    cdef double complex d = gamma + 1j * delta
    cdef double complex a = 1j * sqrt(2.0 * gamma)
    cdef double complex P, S, o1, om, o2, e1, em, e2
    cdef double complex kp1, ks1, kp2, ks2, kp3, ks3, kp4, ks4, p2, s2
    cdef double hk
    with nogil:
        for b in range(nb):
            P = 0
            S = 0
            for kk in range(K):
                hk = hv[kk]
                j = 2 * kk
                o1 = ov[b, j]
                om = ov[b, j + 1]
                o2 = ov[b, j + 2]
                e1 = a * ev[j]
                em = a * ev[j + 1]
                e2 = a * ev[j + 2]
                kp1 = -d * P + 1j * o1 * S + e1
                ks1 = 1j * conj(o1) * P
                p2 = P + 0.5 * hk * kp1
                s2 = S + 0.5 * hk * ks1
                kp2 = -d * p2 + 1j * om * s2 + em
                ks2 = 1j * conj(om) * p2
                p2 = P + 0.5 * hk * kp2
                s2 = S + 0.5 * hk * ks2
                kp3 = -d * p2 + 1j * om * s2 + em
                ks3 = 1j * conj(om) * p2
                p2 = P + hk * kp3
                s2 = S + hk * ks3
                kp4 = -d * p2 + 1j * o2 * s2 + e2
                ks4 = 1j * conj(o2) * p2
                P = P + hk / 6.0 * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
                S = S + hk / 6.0 * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4)
            outv[b] = S
    return out


def rk4_storage_grad(omega, ein, h, double gamma, double delta):
    """Objective ``|S(t2)|^2`` and its exact discrete gradient (reverse mode)."""
    cdef double complex[:] ov = np.ascontiguousarray(np.asarray(omega, dtype=np.complex128).ravel())
    cdef double complex[:] ev = np.ascontiguousarray(ein, dtype=np.complex128)
    cdef double[:] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t K = hv.shape[0], kk, j
    Pa = np.zeros(K + 1, dtype=np.complex128)
    Sa = np.zeros(K + 1, dtype=np.complex128)
    grad = np.zeros(ov.shape[0], dtype=np.complex128)
    cdef double complex[:] Ps = Pa
    cdef double complex[:] Ss = Sa
    cdef double complex[:] g = grad
    cdef double complex d = gamma + 1j * delta
    cdef double complex dc = gamma - 1j * delta
    cdef double complex a = 1j * sqrt(2.0 * gamma)
    cdef double complex P = 0, S = 0, o1, om, o2, e1, em, e2
    cdef double complex kp1, ks1, kp2, ks2, kp3, ks3, kp4, ks4
    cdef double complex P1, S1, P2, S2, P3, S3, P4, S4
    cdef double complex bP, bS, b1P, b1S, b2P, b2S, b3P, b3S, b4P, b4S, yP, yS, zP, zS
    cdef double hk, w6, w3, J
    with nogil:
        for kk in range(K):
            hk = hv[kk]
            j = 2 * kk
            o1 = ov[j]
            om = ov[j + 1]
            o2 = ov[j + 2]
            e1 = a * ev[j]
            em = a * ev[j + 1]
            e2 = a * ev[j + 2]
            kp1 = -d * P + 1j * o1 * S + e1
            ks1 = 1j * conj(o1) * P
            P2 = P + 0.5 * hk * kp1
            S2 = S + 0.5 * hk * ks1
            kp2 = -d * P2 + 1j * om * S2 + em
            ks2 = 1j * conj(om) * P2
            P3 = P + 0.5 * hk * kp2
            S3 = S + 0.5 * hk * ks2
            kp3 = -d * P3 + 1j * om * S3 + em
            ks3 = 1j * conj(om) * P3
            P4 = P + hk * kp3
            S4 = S + hk * ks3
            kp4 = -d * P4 + 1j * o2 * S4 + e2
            ks4 = 1j * conj(o2) * P4
            P = P + hk / 6.0 * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
            S = S + hk / 6.0 * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4)
            Ps[kk + 1] = P
            Ss[kk + 1] = S
        J = cabs2(S)
        bP = 0
        bS = 2.0 * S
        for kk in range(K - 1, -1, -1):
            hk = hv[kk]
            j = 2 * kk
            o1 = ov[j]
            om = ov[j + 1]
            o2 = ov[j + 2]
            e1 = a * ev[j]
            em = a * ev[j + 1]
            e2 = a * ev[j + 2]
            P1 = Ps[kk]
            S1 = Ss[kk]
            kp1 = -d * P1 + 1j * o1 * S1 + e1
            ks1 = 1j * conj(o1) * P1
            P2 = P1 + 0.5 * hk * kp1
            S2 = S1 + 0.5 * hk * ks1
            kp2 = -d * P2 + 1j * om * S2 + em
            ks2 = 1j * conj(om) * P2
            P3 = P1 + 0.5 * hk * kp2
            S3 = S1 + 0.5 * hk * ks2
            kp3 = -d * P3 + 1j * om * S3 + em
            ks3 = 1j * conj(om) * P3
            P4 = P1 + hk * kp3
            S4 = S1 + hk * ks3
            w6 = hk / 6.0
            w3 = hk / 3.0
            b1P = w6 * bP
            b1S = w6 * bS
            b2P = w3 * bP
            b2S = w3 * bS
            b3P = w3 * bP
            b3S = w3 * bS
            b4P = w6 * bP
            b4S = w6 * bS
            yP = bP
            yS = bS
            zP = -dc * b4P - 1j * o2 * b4S
            zS = -1j * conj(o2) * b4P
            g[j + 2] = g[j + 2] - 1j * b4P * conj(S4) + 1j * conj(b4S) * P4
            yP = yP + zP
            yS = yS + zS
            b3P = b3P + hk * zP
            b3S = b3S + hk * zS
            zP = -dc * b3P - 1j * om * b3S
            zS = -1j * conj(om) * b3P
            g[j + 1] = g[j + 1] - 1j * b3P * conj(S3) + 1j * conj(b3S) * P3
            yP = yP + zP
            yS = yS + zS
            b2P = b2P + 0.5 * hk * zP
            b2S = b2S + 0.5 * hk * zS
            zP = -dc * b2P - 1j * om * b2S
            zS = -1j * conj(om) * b2P
            g[j + 1] = g[j + 1] - 1j * b2P * conj(S2) + 1j * conj(b2S) * P2
            yP = yP + zP
            yS = yS + zS
            b1P = b1P + 0.5 * hk * zP
            b1S = b1S + 0.5 * hk * zS
            zP = -dc * b1P - 1j * o1 * b1S
            zS = -1j * conj(o1) * b1P
            g[j] = g[j] - 1j * b1P * conj(S1) + 1j * conj(b1S) * P1
            bP = yP + zP
            bS = yS + zS
    return J, grad
