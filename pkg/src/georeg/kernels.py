"""Fused per-anchor residual/Jacobian/accumulation kernel.

One pass over (hypothesis, anchor) pairs does projection, bilinear sampling,
the Huber-weighted residual and the rank-C update of the 6x6 normal
equations.  Anchors of one hypothesis are accumulated strictly in index order
with Neumaier compensation, so the result for a hypothesis never depends on
which worker or chunk processed it.

:func:`georeg.optimizer.evaluate_level` plus
:func:`georeg.optimizer.batch_system` compute the same quantities with
vectorised numpy and serve as the reference implementation in the tests.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .camera import Z_MIN


@njit(cache=True, inline="always")
def _nadd(s, c, x):
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@njit(cache=True, nogil=True)
def level_pass(R, t, Pw, ref_f, ref_w, feat, unc, kvec, margin, delta, active, with_system, cost, count, H, g):
    """Fill ``cost (M,)``, ``count (M,)`` and optionally ``H (M,6,6)``, ``g (M,6)``.

    ``kvec`` is ``(fx, fy, cx, cy, width, height)`` for the level.  Rows with
    ``active[m] == False`` are left untouched.
    """
    M = R.shape[0]
    N = Pw.shape[0]
    C = feat.shape[2]
    fx, fy, cx, cy = kvec[0], kvec[1], kvec[2], kvec[3]
    W = int(kvec[4])
    Hh = int(kvec[5])
    umax = W - 1 - margin
    vmax = Hh - 1 - margin
    val = np.empty(C)
    du = np.empty(C)
    dv = np.empty(C)
    J = np.empty(6)
    Hs = np.empty((6, 6))
    Hc = np.empty((6, 6))
    gs = np.empty(6)
    gc = np.empty(6)
    Hn = np.empty((6, 6))
    gn = np.empty(6)
    for m in range(M):
        if not active[m]:
            continue
        Hs[:] = 0.0
        Hc[:] = 0.0
        gs[:] = 0.0
        gc[:] = 0.0
        cs = 0.0
        cc = 0.0
        n_valid = 0
        for n in range(N):
            d0 = Pw[n, 0] - t[m, 0]
            d1 = Pw[n, 1] - t[m, 1]
            d2 = Pw[n, 2] - t[m, 2]
            x = R[m, 0, 0] * d0 + R[m, 1, 0] * d1 + R[m, 2, 0] * d2
            y = R[m, 0, 1] * d0 + R[m, 1, 1] * d1 + R[m, 2, 1] * d2
            z = R[m, 0, 2] * d0 + R[m, 1, 2] * d1 + R[m, 2, 2] * d2
            if not z > Z_MIN:
                continue
            iz = 1.0 / z
            u = fx * x * iz + cx
            v = fy * y * iz + cy
            if not (u >= margin and u <= umax and v >= margin and v <= vmax):
                continue
            n_valid += 1
            i0 = min(max(int(math.ceil(u)) - 1, 0), W - 2)
            j0 = min(max(int(math.ceil(v)) - 1, 0), Hh - 2)
            fu = u - i0
            fv = v - j0
            ss = 0.0
            for c in range(C):
                f00 = feat[j0, i0, c]
                f10 = feat[j0, i0 + 1, c]
                f01 = feat[j0 + 1, i0, c]
                f11 = feat[j0 + 1, i0 + 1, c]
                top = f00 + fu * (f10 - f00)
                bot = f01 + fu * (f11 - f01)
                r = top + fv * (bot - top) - ref_f[n, c]
                val[c] = r
                du[c] = (1.0 - fv) * (f10 - f00) + fv * (f11 - f01)
                dv[c] = bot - top
                ss += r * r
            q00 = unc[j0, i0]
            q10 = unc[j0, i0 + 1]
            q01 = unc[j0 + 1, i0]
            q11 = unc[j0 + 1, i0 + 1]
            qt = q00 + fu * (q10 - q00)
            qb = q01 + fu * (q11 - q01)
            w = (qt + fv * (qb - qt)) * ref_w[n]
            s = w * ss
            root = math.sqrt(s)
            if root <= delta:
                rho = s
                drho = 1.0
            else:
                rho = 2.0 * delta * root - delta * delta
                drho = delta / root
            cs, cc = _nadd(cs, cc, rho)
            if not with_system:
                continue
            coef = w * drho
            # projection rows times R^T, then [-a | a x P]
            p0x = fx * iz
            p0z = -fx * x * iz * iz
            p1y = fy * iz
            p1z = -fy * y * iz * iz
            a00 = p0x * R[m, 0, 0] + p0z * R[m, 0, 2]
            a01 = p0x * R[m, 1, 0] + p0z * R[m, 1, 2]
            a02 = p0x * R[m, 2, 0] + p0z * R[m, 2, 2]
            a10 = p1y * R[m, 0, 1] + p1z * R[m, 0, 2]
            a11 = p1y * R[m, 1, 1] + p1z * R[m, 1, 2]
            a12 = p1y * R[m, 2, 1] + p1z * R[m, 2, 2]
            X = Pw[n, 0]
            Y = Pw[n, 1]
            Z = Pw[n, 2]
            b03 = a01 * Z - a02 * Y
            b04 = a02 * X - a00 * Z
            b05 = a00 * Y - a01 * X
            b13 = a11 * Z - a12 * Y
            b14 = a12 * X - a10 * Z
            b15 = a10 * Y - a11 * X
            Hn[:] = 0.0
            gn[:] = 0.0
            for c in range(C):
                gu = du[c]
                gv = dv[c]
                J[0] = -(gu * a00 + gv * a10)
                J[1] = -(gu * a01 + gv * a11)
                J[2] = -(gu * a02 + gv * a12)
                J[3] = gu * b03 + gv * b13
                J[4] = gu * b04 + gv * b14
                J[5] = gu * b05 + gv * b15
                rc = coef * val[c]
                for i in range(6):
                    gn[i] += J[i] * rc
                    ci = coef * J[i]
                    for j in range(i, 6):
                        Hn[i, j] += ci * J[j]
            for i in range(6):
                gs[i], gc[i] = _nadd(gs[i], gc[i], gn[i])
                for j in range(i, 6):
                    Hs[i, j], Hc[i, j] = _nadd(Hs[i, j], Hc[i, j], Hn[i, j])
        cost[m] = cs + cc
        count[m] = n_valid
        if with_system:
            for i in range(6):
                g[m, i] = gs[i] + gc[i]
                for j in range(i, 6):
                    H[m, i, j] = Hs[i, j] + Hc[i, j]
                    H[m, j, i] = H[m, i, j]
