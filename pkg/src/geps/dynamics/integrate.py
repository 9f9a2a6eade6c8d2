"""Fixed-step RK4 and the two rollout modes (Neural-ODE and one-step)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from geps.diffcore import tensor as T


class IntegrationDivergedError(FloatingPointError):
    """Non-finite state during integration.

    ``step`` is the index of the failing step and ``last_state`` the last
    finite state (as an ndarray).
    """

    def __init__(self, step: int, last_state=None, msg: str | None = None):
        super().__init__(msg or f"integration diverged at step {step}")
        self.step = step
        self.last_state = last_state


def _finite(x) -> bool:
    return bool(np.isfinite(T.value(x)).all())


def rk4_step(rhs: Callable, u, t, dt: float, step: int = 0):
    """Classical 4-stage Runge-Kutta update ``u(t) -> u(t + dt)``.

    ``t`` may be a scalar or a per-sample array; ``rhs(u, t)`` must accept
    the same.  Works on ndarrays and tensors alike.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    h = 0.5 * dt
    k1 = rhs(u, t)
    if not _finite(k1):
        raise IntegrationDivergedError(step, T.value(u))
    k2 = rhs(T.add(u, T.mul(k1, h)), t + h)
    if not _finite(k2):
        raise IntegrationDivergedError(step, T.value(u))
    k3 = rhs(T.add(u, T.mul(k2, h)), t + h)
    if not _finite(k3):
        raise IntegrationDivergedError(step, T.value(u))
    k4 = rhs(T.add(u, T.mul(k3, dt)), t + dt)
    if not _finite(k4):
        raise IntegrationDivergedError(step, T.value(u))
    incr = T.add(T.add(k1, k4), T.mul(T.add(k2, k3), 2.0))
    out = T.add(u, T.mul(incr, dt / 6.0))
    if not _finite(out):
        raise IntegrationDivergedError(step, T.value(u))
    return out


def integrate_rk4(rhs: Callable, u0, t0: float, dt: float, n_steps: int):
    """Plain fixed-step RK4 returning only the final state."""
    u = u0
    for i in range(n_steps):
        u = rk4_step(rhs, u, t0 + i * dt, dt, step=i)
    return u


def _time_grid(t_grid):
    """Split a 1D grid or a per-sample ``(n_t, n)`` grid into offsets.

    Returns ``(base_times, offset)`` where ``offset`` is ``None`` or an
    ``(n,)`` array added to every time passed to the RHS.
    """
    tg = np.asarray(t_grid, dtype=np.float64)
    if tg.ndim == 1:
        return tg, None
    if tg.ndim != 2:
        raise ValueError("t_grid must be 1D or (n_t, n)")
    base = tg[:, 0] - tg[0, 0]
    if not np.allclose(tg - tg[0:1, :], base[:, None], rtol=0, atol=1e-12):
        raise ValueError("per-sample time grids must share their step sizes")
    return base + tg[0, 0], tg[0, :] - tg[0, 0]


def rollout_node(f: Callable, u0, c, t_grid: Sequence[float], substeps: int = 1):
    """Integrate ``du/dt = f(u, t, c)`` and sample at ``t_grid``.

    Each interval is split into ``substeps`` RK4 steps.  Returns the stacked
    trajectory with time on axis 0 (``trajectory[0]`` is ``u0``).  A
    two-dimensional ``t_grid`` of shape ``(n_t, n)`` gives each batch sample
    its own clock (used for teacher-forcing windows with time-dependent
    forcing); step sizes must agree across samples.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    base, offset = _time_grid(t_grid)
    if base.size == 0:
        raise ValueError("empty time grid")
    if np.any(np.diff(base) <= 0):
        raise ValueError("t_grid must be strictly increasing")

    def rhs(u, t):
        return f(u, t if offset is None else t + offset, c)

    states = [u0]
    u = u0
    step = 0
    for k in range(base.size - 1):
        dt = (base[k + 1] - base[k]) / substeps
        for s in range(substeps):
            u = rk4_step(rhs, u, base[k] + s * dt, dt, step=step)
            step += 1
        states.append(u)
    return T.stack(states, axis=0)


def rollout_onestep(stepper: Callable, history: Sequence, c, n_steps: int):
    """Autoregressive rollout from a window of ``H`` past states.

    ``stepper(window, c)`` receives the list of the ``H`` most recent states
    (oldest first) and returns the next one.  Returns the list of predicted
    states, without the history.
    """
    window = list(history)
    if not window:
        raise ValueError("history must hold at least one state")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    H = len(window)
    out = []
    for k in range(n_steps):
        nxt = stepper(window, c)
        if not _finite(nxt):
            raise IntegrationDivergedError(k, T.value(window[-1]))
        out.append(nxt)
        window = window[1:] + [nxt] if H > 1 else [nxt]
    return out


def stack_history(window: Sequence, channel_axis: int):
    """Concatenate states along the channel axis (H*C input channels)."""
    if len(window) == 1:
        return window[0]
    return T.concat(list(window), axis=channel_axis)
