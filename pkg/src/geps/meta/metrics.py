"""Losses and evaluation metrics."""

from __future__ import annotations

import numpy as np

from geps.diffcore import tensor as T


class ZeroNormError(ValueError):
    pass


def mse(pred, truth):
    """Mean squared error over every entry (differentiable in ``pred``)."""
    return T.mean(T.square(T.sub(pred, truth)))


def relative_mse_per_traj(truth, pred) -> np.ndarray:
    """``||y_i - yhat_i||^2 / ||y_i||^2`` with trajectories on axis 0."""
    y = np.asarray(truth, dtype=np.float64)
    yh = np.asarray(pred, dtype=np.float64)
    if y.shape != yh.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {yh.shape}")
    if y.ndim == 1:
        y, yh = y[None], yh[None]
    y2 = y.reshape(y.shape[0], -1)
    d2 = (y2 - yh.reshape(y.shape[0], -1))
    den = np.sum(y2 * y2, axis=1)
    if np.any(den == 0):
        raise ZeroNormError("relative MSE undefined for a zero-norm ground truth")
    return np.sum(d2 * d2, axis=1) / den


def relative_mse(truth, pred) -> float:
    """Mean over trajectories of the relative squared error."""
    return float(np.mean(relative_mse_per_traj(truth, pred)))
