# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and arithmetic as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, fabs

cnp.import_array()

cdef int BISECT_MAX = 200


cdef inline double _interp(const double* row, double pos, double inv_dx, Py_ssize_t nlast) noexcept nogil:
    cdef double qf = floor(pos * inv_dx)
    cdef Py_ssize_t q
    cdef double r
    if qf < 0:
        qf = 0
    elif qf > nlast - 1:
        qf = nlast - 1
    q = <Py_ssize_t> qf
    r = pos * inv_dx - qf
    if r < 0.0:
        r = 0.0
    elif r > 1.0:
        r = 1.0
    return row[q] * (1.0 - r) + row[q + 1] * r


cdef inline void _sample2(const double* V, const double* R, Py_ssize_t n, Py_ssize_t j, double theta,
                          double pos, double inv_dx, Py_ssize_t nlast, double* v, double* l) noexcept nogil:
    # speed and rate share the interpolation stencil
    cdef double qf = floor(pos * inv_dx)
    cdef Py_ssize_t q
    cdef double r, a, b
    if qf < 0:
        qf = 0
    elif qf > nlast - 1:
        qf = nlast - 1
    q = <Py_ssize_t> qf
    r = pos * inv_dx - qf
    if r < 0.0:
        r = 0.0
    elif r > 1.0:
        r = 1.0
    cdef Py_ssize_t lo = (j - 1) * n + q
    cdef Py_ssize_t hi = lo + n
    a = V[lo] * (1.0 - r) + V[lo + 1] * r
    b = V[hi] * (1.0 - r) + V[hi + 1] * r
    v[0] = (1.0 - theta) * a + theta * b
    a = R[lo] * (1.0 - r) + R[lo + 1] * r
    b = R[hi] * (1.0 - r) + R[hi + 1] * r
    l[0] = (1.0 - theta) * a + theta * b


cdef inline void _rk4_back(const double* vel, const double* rate, Py_ssize_t n, Py_ssize_t j,
                           double pos, double s, double dt, double inv_dx, Py_ssize_t nlast,
                           double* newpos, double* dlam) noexcept nogil:
    cdef double th_mid = 1.0 - 0.5 * s / dt
    cdef double th_end = 1.0 - s / dt
    cdef double k1, k2, k3, k4, l1, l2, l3, l4
    _sample2(vel, rate, n, j, 1.0, pos, inv_dx, nlast, &k1, &l1)
    _sample2(vel, rate, n, j, th_mid, pos - 0.5 * s * k1, inv_dx, nlast, &k2, &l2)
    _sample2(vel, rate, n, j, th_mid, pos - 0.5 * s * k2, inv_dx, nlast, &k3, &l3)
    _sample2(vel, rate, n, j, th_end, pos - s * k3, inv_dx, nlast, &k4, &l4)
    newpos[0] = pos - s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dlam[0] = s / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)


def trace_representation(vel, rate, src, init, double dx, double dt,
                         Py_ssize_t k_lo, Py_ssize_t k_hi, double xtol):
    cdef const double[:, :] V = np.ascontiguousarray(vel, dtype=np.float64)
    cdef const double[:, :] R = np.ascontiguousarray(rate, dtype=np.float64)
    cdef const double[:, :] S = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:] I0 = np.ascontiguousarray(init, dtype=np.float64)
    cdef Py_ssize_t n = V.shape[1]
    cdef Py_ssize_t nlast = n - 1
    cdef double inv_dx = 1.0 / dx
    cdef Py_ssize_t nk = k_hi - k_lo + 1
    out_arr = np.zeros((nk, n))
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t k, i, j, it
    cdef double pos, lam, acc, hprev, hnew, newpos, dlam, lo, hi, mid, phi, dl
    cdef double s_star, dl_star, theta, s_eta
    cdef bint crossed
    cdef const double* Vp = &V[0, 0]
    cdef const double* Rp = &R[0, 0]
    cdef const double* Sp = &S[0, 0]
    with nogil:
        for k in range(k_lo, k_hi + 1):
            for i in range(n):
                pos = i * dx
                if pos <= 0.0:
                    out[k - k_lo, i] = 0.0
                    continue
                lam = 0.0
                acc = 0.0
                hprev = _interp(Sp + k * n, pos, inv_dx, nlast)
                crossed = False
                j = k
                while j > 0:
                    _rk4_back(Vp, Rp, n, j, pos, dt, dt, inv_dx, nlast, &newpos, &dlam)
                    if newpos < -xtol:
                        lo = 0.0
                        hi = dt
                        s_star = dt
                        dl_star = dlam
                        for it in range(BISECT_MAX):
                            mid = 0.5 * (lo + hi)
                            _rk4_back(Vp, Rp, n, j, pos, mid, dt, inv_dx, nlast, &phi, &dl)
                            if fabs(phi) <= xtol:
                                s_star = mid
                                dl_star = dl
                                break
                            if phi > 0:
                                lo = mid
                            else:
                                hi = mid
                            s_star = hi
                            dl_star = dl
                        theta = 1.0 - s_star / dt
                        s_eta = (1.0 - theta) * S[j - 1, 0] + theta * S[j, 0]
                        out[k - k_lo, i] = acc + 0.5 * s_star * (hprev + exp(-(lam + dl_star)) * s_eta)
                        crossed = True
                        break
                    if newpos < 0.0:
                        newpos = 0.0
                    pos = newpos
                    lam = lam + dlam
                    hnew = exp(-lam) * _interp(Sp + (j - 1) * n, pos, inv_dx, nlast)
                    acc = acc + 0.5 * dt * (hprev + hnew)
                    hprev = hnew
                    j -= 1
                if not crossed:
                    out[k - k_lo, i] = acc + _interp(&I0[0], pos, inv_dx, nlast) * exp(-lam)
    return out_arr


def linear_recurrence(factor, w_lo, w_hi, g):
    f_arr = np.ascontiguousarray(factor, dtype=np.float64)
    a_arr = np.ascontiguousarray(w_lo, dtype=np.float64)
    b_arr = np.ascontiguousarray(w_hi, dtype=np.float64)
    g_arr = np.asarray(g, dtype=np.float64)
    squeeze = g_arr.ndim == 1
    if squeeze:
        g_arr = g_arr[:, None]
    g_arr = np.ascontiguousarray(g_arr)
    cdef const double[:] F = f_arr
    cdef const double[:] A = a_arr
    cdef const double[:] B = b_arr
    cdef const double[:, :] G = g_arr
    u_arr = np.zeros_like(g_arr)
    cdef double[:, :] U = u_arr
    cdef Py_ssize_t n = G.shape[0], nb = G.shape[1], i, c
    with nogil:
        for i in range(n - 1):
            for c in range(nb):
                U[i + 1, c] = F[i] * U[i, c] + A[i] * G[i, c] + B[i] * G[i + 1, c]
    return u_arr[:, 0] if squeeze else u_arr
