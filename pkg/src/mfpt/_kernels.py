"""Compiled inner loops for explicit time stepping with moving traps."""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

COLLAR = 4.0


@njit(cache=True)
def _indicator(s):
    if s <= 0.0:
        return 0.0
    if s < 1.0:
        return 1.5 * s
    if s < 2.0:
        return 2.0 - 0.5 * s
    return 1.0


@njit(cache=True)
def _lagrange(f, out):
    out[0] = -f * (f - 1.0) * (f - 2.0) / 6.0
    out[1] = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0
    out[2] = -(f + 1.0) * f * (f - 2.0) / 2.0
    out[3] = (f + 1.0) * f * (f - 1.0) / 6.0


@njit(cache=True)
def _stencil(px, py, ox, oy, h, index, cols, w, wx, wy):
    """Fill ``cols``/``w`` with the 4x4 stencil; False if it leaves the band."""
    sx = (px - ox) / h
    sy = (py - oy) / h
    bx = math.floor(sx)
    by = math.floor(sy)
    fx = sx - bx
    fy = sy - by
    if abs(fx - round(fx)) < 1e-10:
        fx = round(fx)
    if abs(fy - round(fy)) < 1e-10:
        fy = round(fy)
    if fx >= 1.0:
        bx += 1
        fx = 0.0
    if fy >= 1.0:
        by += 1
        fy = 0.0
    _lagrange(fx, wx)
    _lagrange(fy, wy)
    nx, ny = index.shape
    k = 0
    for a in range(4):
        gi = int(bx) - 1 + a
        for b in range(4):
            gj = int(by) - 1 + b
            if gi < 0 or gi >= nx or gj < 0 or gj >= ny:
                return False
            c = index[gi, gj]
            if c < 0:
                return False
            cols[k] = c
            w[k] = wx[a] * wy[b]
            k += 1
    return True


@njit(cache=True)
def _laplacian_at(c, v, nb, h2):
    e = nb[c, 0]
    wst = nb[c, 1]
    n = nb[c, 2]
    s = nb[c, 3]
    if e < 0 or wst < 0 or n < 0 or s < 0:
        return np.nan
    return (v[e] + v[wst] + v[n] + v[s] - 4.0 * v[c]) / h2


@njit(cache=True)
def fe_period(v, indptr, indices, data, rhs, plain, dt, centers, radii, xy, index, ox, oy, h,
              nb, D, gamma, w_base, trivial, integrals, areas):
    """Advance ``v`` through one period of forward Euler steps.

    Rows flagged in ``plain`` are interior points whose update is the
    five-point Laplacian; their CSR rows are empty and skipped.
    ``centers`` has shape ``(n_steps + 1, n_moving, 2)``. Before step ``k``
    the integral and area of the current state are recorded with the traps at
    ``centers[k]``; the final entry records the end-of-period state. Returns
    0 on success, 1 if a trap stencil left the band.
    """
    n = v.shape[0]
    n_steps = centers.shape[0] - 1
    n_mov = centers.shape[1]
    h2 = h * h
    vnew = np.empty(n)
    cols = np.empty(16, dtype=np.int64)
    w = np.empty(16)
    wx = np.empty(4)
    wy = np.empty(4)
    nx, ny = index.shape
    reach = 2.0 * math.sqrt(2.0) * h
    for k in range(n_steps + 1):
        # quadrature with the moving traps carved out
        tot = 0.0
        area = 0.0
        for i in range(n):
            tot += w_base[i] * v[i]
            area += w_base[i]
        for m in range(n_mov):
            cx = centers[k, m, 0]
            cy = centers[k, m, 1]
            rad = radii[m]
            ilo = max(int(math.floor((cx - rad - reach - ox) / h)), 0)
            ihi = min(int(math.ceil((cx + rad + reach - ox) / h)), nx - 1)
            jlo = max(int(math.floor((cy - rad - reach - oy) / h)), 0)
            jhi = min(int(math.ceil((cy + rad + reach - oy) / h)), ny - 1)
            for gi in range(ilo, ihi + 1):
                for gj in range(jlo, jhi + 1):
                    i = index[gi, gj]
                    if i < 0:
                        continue
                    dx = xy[i, 0] - cx
                    dy = xy[i, 1] - cy
                    r = math.sqrt(dx * dx + dy * dy)
                    if trivial:
                        wk = h2 if r >= rad else 0.0
                    else:
                        scale = (abs(dx) + abs(dy)) / r if r > 0.0 else 1.0
                        wk = h2 * _indicator((r - rad) / (h * scale))
                    # indicators of separate features multiply
                    wk = w_base[i] * wk / h2
                    if wk != w_base[i]:
                        tot -= (w_base[i] - wk) * v[i]
                        area -= w_base[i] - wk
        integrals[k] = tot
        areas[k] = area
        if k == n_steps:
            break

        cdl = dt * D / h2
        for i in range(n):
            if plain[i]:
                vnew[i] = v[i] + cdl * (v[nb[i, 0]] + v[nb[i, 1]] + v[nb[i, 2]] + v[nb[i, 3]]
                                        - 4.0 * v[i]) + dt * rhs[i]
                continue
            acc = rhs[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * v[indices[p]]
            vnew[i] = v[i] + dt * acc

        for m in range(n_mov):
            cx = centers[k, m, 0]
            cy = centers[k, m, 1]
            rad = radii[m]
            ilo = max(int(math.floor((cx - rad - ox) / h)) - 1, 0)
            ihi = min(int(math.ceil((cx + rad - ox) / h)) + 1, nx - 1)
            jlo = max(int(math.floor((cy - rad - oy) / h)) - 1, 0)
            jhi = min(int(math.ceil((cy + rad - oy) / h)) + 1, ny - 1)
            for gi in range(ilo, ihi + 1):
                for gj in range(jlo, jhi + 1):
                    i = index[gi, gj]
                    if i < 0:
                        continue
                    dx = xy[i, 0] - cx
                    dy = xy[i, 1] - cy
                    r = math.sqrt(dx * dx + dy * dy)
                    if r >= rad:
                        continue
                    if rad - r > COLLAR * h:
                        vnew[i] = v[i] - dt * gamma * v[i]
                        continue
                    if r > 0.0:
                        qx = cx + dx * rad / r
                        qy = cy + dy * rad / r
                    else:
                        qx = cx + rad
                        qy = cy
                    # closest-point extension of the Laplacian
                    if not _stencil(qx, qy, ox, oy, h, index, cols, w, wx, wy):
                        return 1
                    lap = 0.0
                    for q in range(16):
                        lq = _laplacian_at(cols[q], v, nb, h2)
                        if lq != lq:
                            return 1
                        lap += w[q] * lq
                    # odd reflection through the mirror point
                    mx = 2.0 * qx - xy[i, 0]
                    my = 2.0 * qy - xy[i, 1]
                    if not _stencil(mx, my, ox, oy, h, index, cols, w, wx, wy):
                        return 1
                    refl = 0.0
                    for q in range(16):
                        refl += w[q] * v[cols[q]]
                    vnew[i] = v[i] + dt * (D * lap - gamma * (v[i] + refl) + 1.0)
        for i in range(n):
            v[i] = vnew[i]
    return 0
