# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: circular im2col / col2im and the Gray-Scott stencil.

Layouts are channels-last.  Column index of tap ``j`` (or ``(di, dj)``) and
channel ``c`` is ``j * C + c`` (or ``(di * k + dj) * C + c``); taps run from
``-(k // 2)`` to ``k // 2``.
"""

import numpy as np


cdef Py_ssize_t[::1] _wrap_table(Py_ssize_t n, Py_ssize_t k):
    # entry m holds (m - k // 2) mod n for m in [0, n + k)
    cdef Py_ssize_t h = k // 2, m, s
    tab = np.empty(n + k, dtype=np.intp)
    cdef Py_ssize_t[::1] t = tab
    for m in range(n + k):
        s = (m - h) % n
        if s < 0:
            s += n
        t[m] = s
    return t


def unfold1d(const double[:, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t b, i, j, c, src, base
    cdef Py_ssize_t[::1] wrap = _wrap_table(L, k)
    out = np.empty((n, L, k * C), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(n):
            for i in range(L):
                for j in range(k):
                    src = wrap[i + j]
                    base = j * C
                    for c in range(C):
                        o[b, i, base + c] = x[b, src, c]
    return out


def fold1d(const double[:, :, ::1] cols, Py_ssize_t k, Py_ssize_t C):
    cdef Py_ssize_t n = cols.shape[0], L = cols.shape[1]
    cdef Py_ssize_t b, i, j, c, dst, base
    cdef Py_ssize_t[::1] wrap = _wrap_table(L, k)
    out = np.zeros((n, L, C), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(n):
            for i in range(L):
                for j in range(k):
                    dst = wrap[i + j]
                    base = j * C
                    for c in range(C):
                        o[b, dst, c] += cols[b, i, base + c]
    return out


def unfold2d(const double[:, :, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t n = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t b, i, j, di, dj, c, si, sj, p, base
    cdef Py_ssize_t[::1] wh = _wrap_table(H, k)
    cdef Py_ssize_t[::1] ww = _wrap_table(W, k)
    out = np.empty((n, H * W, k * k * C), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(n):
            for i in range(H):
                for j in range(W):
                    p = i * W + j
                    for di in range(k):
                        si = wh[i + di]
                        for dj in range(k):
                            sj = ww[j + dj]
                            base = (di * k + dj) * C
                            for c in range(C):
                                o[b, p, base + c] = x[b, si, sj, c]
    return out


def fold2d(const double[:, :, ::1] cols, Py_ssize_t k, Py_ssize_t H, Py_ssize_t W,
           Py_ssize_t C):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t b, i, j, di, dj, c, si, sj, p, base
    cdef Py_ssize_t[::1] wh = _wrap_table(H, k)
    cdef Py_ssize_t[::1] ww = _wrap_table(W, k)
    out = np.zeros((n, H, W, C), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for b in range(n):
            for i in range(H):
                for j in range(W):
                    p = i * W + j
                    for di in range(k):
                        si = wh[i + di]
                        for dj in range(k):
                            sj = ww[j + dj]
                            base = (di * k + dj) * C
                            for c in range(C):
                                o[b, si, sj, c] += cols[b, p, base + c]
    return out


def gray_scott_rhs(const double[:, ::1] u, const double[:, ::1] v, double F,
                   double kill, double Du, double Dv, double inv_ds2):
    """Reaction-diffusion tendencies with a periodic 5-point Laplacian."""
    cdef Py_ssize_t H = u.shape[0], W = u.shape[1]
    cdef Py_ssize_t i, j, ip, im, jp, jm
    cdef double lu, lv, uvv
    du_arr = np.empty((H, W), dtype=np.float64)
    dv_arr = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] du = du_arr
    cdef double[:, ::1] dv = dv_arr
    with nogil:
        for i in range(H):
            ip = i + 1 if i + 1 < H else 0
            im = i - 1 if i > 0 else H - 1
            for j in range(W):
                jp = j + 1 if j + 1 < W else 0
                jm = j - 1 if j > 0 else W - 1
                lu = (u[ip, j] + u[im, j] + u[i, jp] + u[i, jm] - 4.0 * u[i, j]) * inv_ds2
                lv = (v[ip, j] + v[im, j] + v[i, jp] + v[i, jm] - 4.0 * v[i, j]) * inv_ds2
                uvv = u[i, j] * v[i, j] * v[i, j]
                du[i, j] = Du * lu - uvv + F * (1.0 - u[i, j])
                dv[i, j] = Dv * lv + uvv - (F + kill) * v[i, j]
    return du_arr, dv_arr
