"""Pure numpy implementations of the hot kernels.

Both functions have exact counterparts in ``_ckernels.pyx``; the two
backends follow the same arithmetic and agree to rounding.
"""

from __future__ import annotations

import numpy as np

BISECT_MAX = 200


def _interp(row, pos, inv_dx, nlast):
    q = np.floor(pos * inv_dx)
    q = np.clip(q, 0, nlast - 1).astype(np.intp)
    r = np.clip(pos * inv_dx - q, 0.0, 1.0)
    return row[q] * (1.0 - r) + row[q + 1] * r


def _sample(table, j, theta, pos, inv_dx, nlast):
    """Bilinear sample between level ``j - 1`` (theta=0) and ``j`` (theta=1)."""
    lo = _interp(table[j - 1], pos, inv_dx, nlast)
    hi = _interp(table[j], pos, inv_dx, nlast)
    return (1.0 - theta) * lo + theta * hi


def _rk4_back(vel, rate, j, pos, s, dt, inv_dx, nlast):
    """One backward RK4 step of size ``s`` from level ``j``, with the rate integral."""
    th_mid = 1.0 - 0.5 * s / dt
    th_end = 1.0 - s / dt
    k1 = _sample(vel, j, 1.0, pos, inv_dx, nlast)
    l1 = _sample(rate, j, 1.0, pos, inv_dx, nlast)
    p2 = pos - 0.5 * s * k1
    k2 = _sample(vel, j, th_mid, p2, inv_dx, nlast)
    l2 = _sample(rate, j, th_mid, p2, inv_dx, nlast)
    p3 = pos - 0.5 * s * k2
    k3 = _sample(vel, j, th_mid, p3, inv_dx, nlast)
    l3 = _sample(rate, j, th_mid, p3, inv_dx, nlast)
    p4 = pos - s * k3
    k4 = _sample(vel, j, th_end, p4, inv_dx, nlast)
    l4 = _sample(rate, j, th_end, p4, inv_dx, nlast)
    newpos = pos - s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dlam = s / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return newpos, dlam


def trace_representation(vel, rate, src, init, dx, dt, k_lo, k_hi, xtol):
    """Evaluate the characteristic representation at levels ``k_lo..k_hi``.

    ``vel``, ``rate`` and ``src`` are ``(levels, nodes)`` tables of growth
    speed, loss rate ``D gamma + mu`` and recruitment at ``t_k = k dt``;
    ``init`` is the density at level 0. Each node at each target level is
    traced back with RK4 on the bilinear speed field; the loss rate is
    integrated along the same stages and the source by trapezoid on level
    points. Paths that reach ``x = 0`` are cut at the entry time found by
    bisection of the last step to ``|x| <= xtol``.
    """
    vel = np.ascontiguousarray(vel, dtype=float)
    rate = np.ascontiguousarray(rate, dtype=float)
    src = np.ascontiguousarray(src, dtype=float)
    init = np.ascontiguousarray(init, dtype=float)
    n = vel.shape[1]
    nlast = n - 1
    inv_dx = 1.0 / dx
    nk = k_hi - k_lo + 1
    P = nk * n
    pos = np.tile(np.arange(n, dtype=float) * dx, nk)
    lam = np.zeros(P)
    acc = np.zeros(P)
    hprev = np.zeros(P)
    out = np.zeros(P)
    done = np.zeros(P, dtype=bool)
    for j in range(k_hi, 0, -1):
        if j >= k_lo:
            b0 = (j - k_lo) * n
            blk = slice(b0, b0 + n)
            hprev[blk] = _interp(src[j], pos[blk], inv_dx, nlast)
            at_edge = pos[blk] <= 0.0
            done[blk] = at_edge
            out[blk][at_edge] = 0.0
            start = b0
        else:
            start = 0
        idx = start + np.nonzero(~done[start:])[0]
        if idx.size == 0:
            continue
        p0 = pos[idx]
        newpos, dlam = _rk4_back(vel, rate, j, p0, dt, dt, inv_dx, nlast)
        cross = newpos < -xtol
        keep = ~cross
        ik = idx[keep]
        pk = np.maximum(newpos[keep], 0.0)
        pos[ik] = pk
        lam[ik] += dlam[keep]
        hnew = np.exp(-lam[ik]) * _interp(src[j - 1], pk, inv_dx, nlast)
        acc[ik] += 0.5 * dt * (hprev[ik] + hnew)
        hprev[ik] = hnew
        if cross.any():
            ic = idx[cross]
            pc = p0[cross]
            lo = np.zeros(ic.size)
            hi = np.full(ic.size, dt)
            s_star = np.full(ic.size, dt)
            dl_star = dlam[cross].copy()
            open_ = np.ones(ic.size, dtype=bool)
            for _ in range(BISECT_MAX):
                mid = 0.5 * (lo + hi)
                phi, dl = _rk4_back(vel, rate, j, pc, mid, dt, inv_dx, nlast)
                hit = open_ & (np.abs(phi) <= xtol)
                s_star[hit] = mid[hit]
                dl_star[hit] = dl[hit]
                open_ &= ~hit
                if not open_.any():
                    break
                pos_side = phi > 0
                lo = np.where(open_ & pos_side, mid, lo)
                hi = np.where(open_ & ~pos_side, mid, hi)
                s_star[open_] = hi[open_]
                dl_star[open_] = dl[open_]
            theta = 1.0 - s_star / dt
            s_eta = (1.0 - theta) * src[j - 1, 0] + theta * src[j, 0]
            h_eta = np.exp(-(lam[ic] + dl_star)) * s_eta
            out[ic] = acc[ic] + 0.5 * s_star * (hprev[ic] + h_eta)
            done[ic] = True
    alive = ~done
    out[alive] = acc[alive] + _interp(init, pos[alive], inv_dx, nlast) * np.exp(-lam[alive])
    return out.reshape(nk, n)


def linear_recurrence(factor, w_lo, w_hi, g):
    """Solve ``u_0 = 0``, ``u_{i+1} = f_i u_i + a_i g_i + b_i g_{i+1}``.

    ``g`` is ``(n,)`` or ``(n, batch)``; ``factor``, ``w_lo`` and ``w_hi``
    have one entry per interval.
    """
    factor = np.asarray(factor, dtype=float)
    w_lo = np.asarray(w_lo, dtype=float)
    w_hi = np.asarray(w_hi, dtype=float)
    g = np.asarray(g, dtype=float)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[:, None]
    u = np.zeros_like(g)
    for i in range(g.shape[0] - 1):
        u[i + 1] = factor[i] * u[i] + w_lo[i] * g[i] + w_hi[i] * g[i + 1]
    return u[:, 0] if squeeze else u
