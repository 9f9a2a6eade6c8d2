"""Numpy implementations of the compiled kernels (same signatures)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def unfold1d(x: np.ndarray, k: int) -> np.ndarray:
    n, L, C = x.shape
    h = k // 2
    idx = (np.arange(L)[:, None] + np.arange(k)[None, :] - h) % L
    return x[:, idx, :].reshape(n, L, k * C)


def fold1d(cols: np.ndarray, k: int, C: int) -> np.ndarray:
    n, L, _ = cols.shape
    h = k // 2
    c4 = cols.reshape(n, L, k, C)
    out = np.zeros((n, L, C))
    for j in range(k):
        out += np.roll(c4[:, :, j, :], j - h, axis=1)
    return out


def unfold2d(x: np.ndarray, k: int) -> np.ndarray:
    n, H, W, C = x.shape
    h = k // 2
    if k <= min(H, W):
        xp = np.pad(x, ((0, 0), (h, h), (h, h), (0, 0)), mode="wrap")
    else:
        ri = (np.arange(H + 2 * h) - h) % H
        ci = (np.arange(W + 2 * h) - h) % W
        xp = x[:, ri][:, :, ci]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # n, H, W, C, k, k
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, H * W, k * k * C)


def fold2d(cols: np.ndarray, k: int, H: int, W: int, C: int) -> np.ndarray:
    n = cols.shape[0]
    h = k // 2
    c5 = cols.reshape(n, H, W, k, k, C)
    out = np.zeros((n, H, W, C))
    for di in range(k):
        for dj in range(k):
            out += np.roll(c5[:, :, :, di, dj, :], (di - h, dj - h), axis=(1, 2))
    return out


def gray_scott_rhs(u, v, F, kill, Du, Dv, inv_ds2):
    lu = (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1)
          - 4.0 * u) * inv_ds2
    lv = (np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1)
          - 4.0 * v) * inv_ds2
    uvv = u * v * v
    return Du * lu - uvv + F * (1.0 - u), Dv * lv + uvv - (F + kill) * v
