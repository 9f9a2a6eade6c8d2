"""Ground-truth simulators and initial conditions."""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from geps.datagen.envs import EnvironmentSpec
from geps.diffcore.rng import stream
from geps.dynamics.integrate import IntegrationDivergedError, rk4_step
from geps.dynamics.physics import (
    COMBINED_LENGTH,
    GS_DS,
    GS_DU,
    GS_DV,
    rhs_gray_scott_full,
    rhs_pendulum,
    wavenumbers,
)


class CFLViolationError(IntegrationDivergedError):
    pass


class ToleranceError(RuntimeError):
    pass


def time_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon {T} is not a whole number of steps {dt}")
    return np.arange(n + 1) * dt


# pendulum -------------------------------------------------------------------

def pendulum_ic(seed, n: int = 1) -> np.ndarray:
    rng = stream(seed, "pendulum-ic")
    th = rng.uniform(0.0, np.pi / 12, size=n)
    om = rng.uniform(0.0, 1.0, size=n)
    return np.stack([th, om], axis=-1)


def pendulum_coeffs(env: EnvironmentSpec) -> dict:
    c = env.coeffs
    return {"omega0_sq": c["omega0"] ** 2, "alpha": c["alpha"], "F": c["F"], "w_f": c["w_f"]}


def integrate_pendulum(env: EnvironmentSpec, ics: np.ndarray, T: float = 25.0,
                       dt: float = 0.5, micro: int = 100) -> np.ndarray:
    """RK4 with ``micro`` steps per saved interval; ``ics`` is ``(n, 2)``."""
    p = pendulum_coeffs(env)
    ts = time_grid(T, dt)
    h = dt / micro
    u = np.array(ics, dtype=np.float64)
    out = [u]
    step = 0
    for k in range(ts.size - 1):
        for s in range(micro):
            u = rk4_step(lambda x, t: rhs_pendulum(x, p, t), u, ts[k] + s * h, h, step)
            step += 1
        out.append(u)
    return np.stack(out, axis=1)  # n, T, 2


def simulate_pendulum(env: EnvironmentSpec, seed, T: float = 25.0, dt: float = 0.5,
                      micro: int = 100, ic=None) -> np.ndarray:
    """One trajectory ``(n_t, 2)`` of ``(theta, theta_dot)``."""
    ic = pendulum_ic(seed)[0] if ic is None else np.asarray(ic, dtype=np.float64)
    return integrate_pendulum(env, ic[None], T, dt, micro)[0]


# gray-scott -----------------------------------------------------------------

def gray_scott_ic(seed, n: int = 32, patches: int = 3, size: int = 5) -> np.ndarray:
    """Background ``u=1, v=0`` with square patches ``(0.5, 0.25)`` plus 1% noise."""
    rng = stream(seed, "gray-scott-ic")
    u = np.ones((n, n))
    v = np.zeros((n, n))
    for _ in range(patches):
        i, j = rng.integers(0, n, size=2)
        rows = (i + np.arange(size)) % n
        cols = (j + np.arange(size)) % n
        u[np.ix_(rows, cols)] = 0.5
        v[np.ix_(rows, cols)] = 0.25
    u += 0.01 * rng.uniform(size=(n, n))
    v += 0.01 * rng.uniform(size=(n, n))
    return np.stack([u, v])


def simulate_gray_scott(env: EnvironmentSpec, seed, T: float = 200.0, dt: float = 1.0,
                        n: int = 32, ic=None, rtol: float = 1e-8, atol: float = 1e-8) -> np.ndarray:
    """Adaptive RK45 reference run, saved every ``dt``; returns ``(n_t, 2, n, n)``."""
    state0 = gray_scott_ic(seed, n) if ic is None else np.asarray(ic, dtype=np.float64)
    n = state0.shape[-1]
    p = {"F": env.coeffs["F"], "k": env.coeffs["k"]}
    ds = env.domain.get("extent", GS_DS * n) / n

    def f(_t, y):
        s = y.reshape(2, n, n)
        du, dv = rhs_gray_scott_full(s[0], s[1], p, GS_DU, GS_DV, ds)
        return np.concatenate([du.ravel(), dv.ravel()])

    ts = time_grid(T, dt)
    sol = solve_ivp(f, (0.0, ts[-1]), state0.ravel(), method="RK45", t_eval=ts,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise ToleranceError(sol.message)
    if not np.isfinite(sol.y).all():
        raise IntegrationDivergedError(int(np.argmax(~np.isfinite(sol.y).all(0))))
    return sol.y.T.reshape(ts.size, 2, n, n)


# spectral helpers -----------------------------------------------------------

def spectral_filter_downsample(field: np.ndarray, target_points: int) -> np.ndarray:
    """Sharp low-pass (keep ``|k| < target/2``) then take every stride-th point."""
    field = np.asarray(field, dtype=np.float64)
    n = field.shape[-1]
    if target_points < 1 or n % target_points:
        raise ValueError(f"target {target_points} does not divide {n}")
    if n & (n - 1) or target_points & (target_points - 1):
        raise ValueError("grid sizes must be powers of two")
    stride = n // target_points
    fh = np.fft.rfft(field, axis=-1)
    fh[..., target_points // 2:] = 0.0
    return np.fft.irfft(fh, n=n, axis=-1)[..., ::stride]


def energy_spectrum(k, k0: float):
    k = np.asarray(k, dtype=np.float64)
    s = k / k0
    return (2.0 / 3.0) * np.sqrt(np.pi) * s ** 4 / k0 * np.exp(-s ** 2)


def burgers_spectrum_ic(k0: float, n_points: int, seed) -> np.ndarray:
    """Random-phase field on ``[0, 2pi)`` with mode amplitudes ``sqrt(2 E(k))``.

    Modes ``0 < |k| < n/2`` are filled Hermitian-symmetrically, so the mean
    square of the field is ``2 * sum_{k != 0} E(|k|)``.
    """
    if n_points < 4 or n_points & (n_points - 1):
        raise ValueError("n_points must be a power of two")
    rng = stream(seed, "burgers-ic")
    kmax = n_points // 2
    k = np.arange(1, kmax)
    phase = rng.uniform(0.0, 2 * np.pi, size=k.size)
    uh = np.zeros(kmax + 1, dtype=np.complex128)
    uh[1:kmax] = np.sqrt(2.0 * energy_spectrum(k, k0)) * np.exp(1j * phase)
    return np.fft.irfft(uh, n=n_points) * n_points


# ETDRK4 -------------------------------------------------------------------------

def etdrk4_coeffs(L: np.ndarray, h: float, m: int = 32):
    """Kassam-Trefethen contour-integral coefficients for ``u' = L u + N(u)``."""
    E = np.exp(h * L)
    E2 = np.exp(h * L / 2)
    r = np.exp(1j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
    LR = h * L[:, None] + r[None, :]
    Q = h * np.mean((np.exp(LR / 2) - 1) / LR, axis=1)
    f1 = h * np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1)
    f2 = h * np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR ** 3, axis=1)
    f3 = h * np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=1)
    if np.isrealobj(L):
        Q, f1, f2, f3 = (np.real(x) for x in (Q, f1, f2, f3))
    return E, E2, Q, f1, f2, f3


def etdrk4_step(vh, t, h, coeffs, N):
    E, E2, Q, f1, f2, f3 = coeffs
    Nv = N(vh, t)
    a = E2 * vh + Q * Nv
    Na = N(a, t + h / 2)
    b = E2 * vh + Q * Na
    Nb = N(b, t + h / 2)
    c = E2 * a + Q * (2 * Nb - Nv)
    Nc = N(c, t + h)
    return E * vh + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3


def _dealias_mask(n: int) -> np.ndarray:
    k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    return k < n / 3.0


# burgers ----------------------------------------------------------------------

def burgers_forcing(env: EnvironmentSpec, x: np.ndarray, t: float) -> np.ndarray | None:
    f = env.forcing
    tag = f.get("tag", "none")
    if tag == "none" or f.get("F", 0.0) == 0.0:
        return None
    if tag == "sincos":
        return f["F"] * (np.sin(f["w_f"] * x) + np.cos(f["w_f"] * t))
    if tag == "gauss":
        return f["F"] * np.exp(-f["w_f"] * (x - np.pi) ** 2)
    raise ValueError(f"unknown forcing tag {tag!r}")


def simulate_burgers_dns(env: EnvironmentSpec, u0: np.ndarray, T: float = 0.05,
                         dt: float = 1e-3, dt_micro: float | None = None,
                         cfl: float = 0.5) -> np.ndarray:
    """Pseudo-spectral ETDRK4 with 2/3 dealiasing on ``[0, 2pi)``.

    ``u0`` is ``(..., n)``.  The micro-step is chosen from the initial
    velocity unless given; the advective CFL number is checked after every
    saved frame.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    n = u0.shape[-1]
    x = np.arange(n) * (2 * np.pi / n)
    dx = 2 * np.pi / n
    k = np.fft.fftfreq(n, d=1.0 / n)
    ik = 1j * k
    ik[n // 2] = 0.0
    mask = _dealias_mask(n)
    nu = env.coeffs["nu"]
    L = -nu * k ** 2
    ts = time_grid(T, dt)
    umax = max(np.abs(u0).max(), 1e-12)
    if dt_micro is None:
        dt_micro = min(dt, 0.25 * dx / umax)
    sub = int(np.ceil(dt / dt_micro - 1e-9))
    h = dt / sub
    coeffs = etdrk4_coeffs(L.astype(np.complex128), h)

    def N(vh, t):
        u = np.real(np.fft.ifft(vh, axis=-1))
        nl = -0.5 * ik * np.fft.fft(u * u, axis=-1) * mask
        f = burgers_forcing(env, x, t)
        if f is not None:
            nl = nl + np.fft.fft(f)
        return nl

    vh = np.fft.fft(u0, axis=-1)
    out = [u0]
    step = 0
    for j in range(ts.size - 1):
        for s in range(sub):
            vh = etdrk4_step(vh, ts[j] + s * h, h, coeffs, N)
            step += 1
        u = np.real(np.fft.ifft(vh, axis=-1))
        if not np.isfinite(u).all():
            raise IntegrationDivergedError(step, out[-1])
        courant = h * np.abs(u).max() / dx
        if courant > cfl:
            raise CFLViolationError(step, out[-1],
                                    f"CFL number {courant:.3f} exceeds {cfl} at step {step}")
        out.append(u)
    return np.stack(out, axis=-2)  # ..., n_t, n


def simulate_burgers(env: EnvironmentSpec, ic: np.ndarray, T: float = 0.05, dt: float = 1e-3,
                     les_points: int = 256, dt_micro: float | None = None) -> np.ndarray:
    """DNS from ``ic`` then filter and decimate every frame to ``les_points``."""
    dns = simulate_burgers_dns(env, ic, T, dt, dt_micro)
    return spectral_filter_downsample(dns, les_points)


# combined equation ---------------------------------------------------------------

def combined_ic(seed, n: int = 256, length: float = COMBINED_LENGTH, J: int = 5) -> np.ndarray:
    rng = stream(seed, "combined-ic")
    A = rng.uniform(-0.5, 0.5, size=J)
    ell = rng.integers(1, 4, size=J)
    phi = rng.uniform(0.0, 2 * np.pi, size=J)
    x = np.arange(n) * (length / n)
    return np.sum(A[:, None] * np.sin(2 * np.pi * ell[:, None] * x[None, :] / length
                                      + phi[:, None]), axis=0)


def simulate_combined(env: EnvironmentSpec, seed=None, T: float = 30.0, n_frames: int = 10,
                      n: int = 256, ic=None, dt_micro: float = 0.01,
                      length: float | None = None) -> np.ndarray:
    """ETDRK4 on the dealiased grid; ``n_frames`` equispaced frames on ``[0, T]``."""
    length = env.domain.get("extent", COMBINED_LENGTH) if length is None else length
    u0 = combined_ic(seed, n, length) if ic is None else np.asarray(ic, dtype=np.float64)
    n = u0.shape[-1]
    c = env.coeffs
    k = wavenumbers(n, length)
    k_odd = k.copy()
    k_odd[n // 2] = 0.0
    L = -c["beta"] * k ** 2 + 1j * c["delta"] * k_odd ** 3 - c["gamma"] * k ** 4
    mask = _dealias_mask(n)
    alpha = c["alpha"]
    frame_dt = T / (n_frames - 1)
    sub = int(np.ceil(frame_dt / dt_micro - 1e-9))
    h = frame_dt / sub
    coeffs = etdrk4_coeffs(L.astype(np.complex128), h)

    def N(vh, _t):
        u = np.real(np.fft.ifft(vh, axis=-1))
        return -1j * k_odd * alpha * np.fft.fft(u * u, axis=-1) * mask

    vh = np.fft.fft(u0, axis=-1)
    out = [u0]
    step = 0
    for _ in range(n_frames - 1):
        for _s in range(sub):
            vh = etdrk4_step(vh, 0.0, h, coeffs, N)
            step += 1
        u = np.real(np.fft.ifft(vh, axis=-1))
        if not np.isfinite(u).all() or np.abs(u).max() > 1e6:
            raise IntegrationDivergedError(step, out[-1])
        out.append(u)
    return np.stack(out, axis=-2)
