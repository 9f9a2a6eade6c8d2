"""Right-hand sides of the physical systems.

Every function works on plain arrays (fast path, used by the simulators) and
on tensors (inside hybrid models), so the same code produces ground truth
and differentiable known physics.  Coefficients may be scalars or ``(n,)``
arrays with one value per batch sample.

State layouts
-------------
pendulum     ``(..., 2)`` holding ``(theta, theta_dot)``
gray-scott   ``(..., 2, H, W)`` holding ``(u, v)``
burgers      ``(..., 1, L)`` (the functions below take the bare field)
combined     ``(..., 1, L)``
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from geps.diffcore import kernels
from geps.diffcore import tensor as T

# Diffusion constants and grid spacing of the Gray-Scott system.
GS_DU = 0.2097
GS_DV = 0.105
GS_DS = 2.0

COMBINED_LENGTH = 16.0


def _bcast(p, nd: int):
    """Reshape an ``(n,)`` coefficient so it broadcasts over ``nd`` trailing axes."""
    shape = np.shape(T.value(p))
    if len(shape) == 1 and nd > 0:
        return T.reshape(p, shape + (1,) * nd)
    return p


def _coef(p, name):
    try:
        return p[name]
    except KeyError:
        raise KeyError(f"missing physical coefficient {name!r}") from None


# pendulum ------------------------------------------------------------------

def rhs_pendulum(state, p, t):
    """Damped, driven pendulum; ``p`` has omega0_sq, F, w_f and alpha."""
    th = T.getitem(state, (Ellipsis, 0))
    om = T.getitem(state, (Ellipsis, 1))
    acc = T.neg(T.mul(_coef(p, "omega0_sq"), T.sin(th)))
    acc = T.sub(acc, T.mul(_coef(p, "alpha"), om))
    acc = T.add(acc, T.mul(_coef(p, "F"), T.cos(T.mul(_coef(p, "w_f"), t))))
    return T.stack([om, acc], axis=-1)


def rhs_pendulum_known(state, p, t):
    """Pendulum without the damping term: ``-omega0^2 sin(theta) + F cos(w_f t)``."""
    th = T.getitem(state, (Ellipsis, 0))
    om = T.getitem(state, (Ellipsis, 1))
    acc = T.neg(T.mul(_coef(p, "omega0_sq"), T.sin(th)))
    acc = T.add(acc, T.mul(_coef(p, "F"), T.cos(T.mul(_coef(p, "w_f"), t))))
    return T.stack([om, acc], axis=-1)


def pendulum_energy(state, omega0_sq: float):
    state = np.asarray(state)
    return 0.5 * state[..., 1] ** 2 - omega0_sq * np.cos(state[..., 0])


# gray-scott ----------------------------------------------------------------

def laplacian_periodic(f, ds: float):
    """5-point Laplacian over the last two axes with wraparound."""
    s = T.add(T.add(T.roll(f, 1, -1), T.roll(f, -1, -1)),
              T.add(T.roll(f, 1, -2), T.roll(f, -1, -2)))
    return T.mul(T.sub(s, T.mul(f, 4.0)), 1.0 / ds ** 2)


def rhs_gray_scott_full(u, v, p, Du: float = GS_DU, Dv: float = GS_DV, ds: float = GS_DS):
    """Gray-Scott reaction-diffusion on a periodic grid.

    ``du/dt = Du lap(u) - u v^2 + F (1 - u)``,
    ``dv/dt = Dv lap(v) + u v^2 - (F + k) v``.
    """
    F, k = _coef(p, "F"), _coef(p, "k")
    if (not T._any_tensor(u, v, F, k) and np.ndim(u) == 2 and np.ndim(F) == 0
            and np.ndim(k) == 0):
        return kernels.gray_scott_rhs(u, v, F, k, Du, Dv, 1.0 / ds ** 2)
    F, k = _bcast(F, 2), _bcast(k, 2)
    uvv = T.mul(u, T.square(v))
    du = T.add(T.sub(T.mul(laplacian_periodic(u, ds), Du), uvv), T.mul(F, T.sub(1.0, u)))
    dv = T.sub(T.add(T.mul(laplacian_periodic(v, ds), Dv), uvv), T.mul(T.add(F, k), v))
    return du, dv


def rhs_gray_scott_state(state, p, Du: float = GS_DU, Dv: float = GS_DV, ds: float = GS_DS):
    u = T.getitem(state, (Ellipsis, 0, slice(None), slice(None)))
    v = T.getitem(state, (Ellipsis, 1, slice(None), slice(None)))
    du, dv = rhs_gray_scott_full(u, v, p, Du, Dv, ds)
    return T.stack([du, dv], axis=-3)


# burgers -------------------------------------------------------------------

def rhs_burgers_known(u, nu, dx: float, forcing=None):
    """Viscous Burgers with centered differences on the last axis.

    Advection uses the conservative flux ``u^2/2`` so the discrete mean is
    preserved exactly when ``nu = 0`` (the centered flux difference
    telescopes).
    """
    flux = T.mul(T.square(u), 0.5)
    adv = T.mul(T.sub(T.roll(flux, -1, -1), T.roll(flux, 1, -1)), -0.5 / dx)
    lap = T.mul(T.sub(T.add(T.roll(u, -1, -1), T.roll(u, 1, -1)), T.mul(u, 2.0)),
                1.0 / dx ** 2)
    out = T.add(adv, T.mul(_bcast(nu, np.ndim(T.value(u)) - 1), lap))
    if forcing is not None:
        out = T.add(out, forcing)
    return out


# combined equation ---------------------------------------------------------

def wavenumbers(n: int, length: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


@lru_cache(maxsize=32)
def spectral_derivative_matrix(n: int, length: float, order: int) -> np.ndarray:
    """Dense real matrix ``D`` with ``(u @ D)`` the spectral ``order``-th derivative.

    The Nyquist mode is dropped for odd orders so the result stays real.
    """
    k = wavenumbers(n, length)
    sym = (1j * k) ** order
    if order % 2 and n % 2 == 0:
        sym[n // 2] = 0.0
    eye = np.eye(n)
    D = np.real(np.fft.ifft(sym[None, :] * np.fft.fft(eye, axis=1), axis=1))
    D.flags.writeable = False
    return D


def _spectral_rhs_numpy(u, alpha, beta, delta, gamma, length):
    n = u.shape[-1]
    k = wavenumbers(n, length)
    if n % 2 == 0:
        k_odd = k.copy()
        k_odd[n // 2] = 0.0
    else:
        k_odd = k
    uh = np.fft.fft(u, axis=-1)
    u2h = np.fft.fft(u * u, axis=-1)
    lin = -beta * k ** 2 + 1j * delta * k_odd ** 3 - gamma * k ** 4
    rh = -1j * k_odd * alpha * u2h + lin * uh
    return np.real(np.fft.ifft(rh, axis=-1))


def rhs_combined(u, p, length: float = COMBINED_LENGTH):
    """``-d/dx(alpha u^2 - beta u_x + delta u_xx + gamma u_xxx)`` spectrally.

    ``p`` maps alpha, beta, delta, gamma.  Plain arrays go through the FFT;
    tensors go through dense derivative matrices so gradients flow.
    """
    a, b, d, g = (_coef(p, name) for name in ("alpha", "beta", "delta", "gamma"))
    nd = np.ndim(T.value(u)) - 1
    if not T._any_tensor(u, a, b, d, g):
        a, b, d, g = (np.reshape(x, np.shape(x) + (1,) * nd) if np.ndim(x) == 1 else x
                      for x in (a, b, d, g))
        return _spectral_rhs_numpy(np.asarray(u), a, b, d, g, length)
    n = np.shape(T.value(u))[-1]
    D1, D2, D3, D4 = (spectral_derivative_matrix(n, float(length), o) for o in (1, 2, 3, 4))
    a, b, d, g = (_bcast(x, nd) for x in (a, b, d, g))
    out = T.neg(T.mul(a, T.matmul(T.square(u), D1)))
    out = T.add(out, T.mul(b, T.matmul(u, D2)))
    out = T.sub(out, T.mul(d, T.matmul(u, D3)))
    return T.sub(out, T.mul(g, T.matmul(u, D4)))


# registry -------------------------------------------------------------------

COEFFICIENTS = {
    "pendulum": ("omega0_sq", "F", "w_f"),
    "gray_scott": ("F", "k"),
    "burgers": ("nu",),
    "combined": ("alpha", "beta", "delta", "gamma"),
}

INITIAL_COEFFICIENTS = {
    "pendulum": (0.1, 0.2, 0.5),
    "gray_scott": (5e-2, 5e-2),
    "burgers": (1e-2,),
    "combined": (0.75, 0.25, 0.5, 0.5),
}

# Spatial rank of each system's state (0 for ODEs); channels precede space.
SPATIAL_RANK = {"pendulum": 0, "gray_scott": 2, "burgers": 1, "combined": 1}
CHANNELS = {"pendulum": 2, "gray_scott": 2, "burgers": 1, "combined": 1}


def known_physics(kind: str, state, p, t, grid: dict | None = None):
    """Model-side known physics for a full (possibly batched) state."""
    grid = grid or {}
    if kind == "pendulum":
        return rhs_pendulum_known(state, p, t)
    if kind == "gray_scott":
        return rhs_gray_scott_state(state, p, grid.get("Du", GS_DU), grid.get("Dv", GS_DV),
                                    grid.get("ds", GS_DS))
    if kind == "burgers":
        n = np.shape(T.value(state))[-1]
        dx = grid.get("dx", 2.0 * np.pi / n)
        return rhs_burgers_known(state, _coef(p, "nu"), dx)
    if kind == "combined":
        return rhs_combined(state, p, grid.get("length", COMBINED_LENGTH))
    raise ValueError(f"unknown system {kind!r}")
