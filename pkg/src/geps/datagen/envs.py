"""Environment descriptors and samplers for the four systems."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from geps.diffcore.rng import stream

KINDS = ("pendulum", "gray_scott", "burgers", "combined")
POOLS = ("train", "adapt")

# Degrees of variation per system.
DEGREES = {"pendulum": 4, "gray_scott": 2, "burgers": 3, "combined": 4}

BURGERS_F = 0.5
BURGERS_WF_TRAIN = 1.5


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str
    env_id: str
    coeffs: dict
    forcing: dict = field(default_factory=lambda: {"tag": "none"})
    domain: dict = field(default_factory=dict)
    pool: str = "train"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "env_id": self.env_id, "coeffs": dict(self.coeffs),
                "forcing": dict(self.forcing), "domain": dict(self.domain), "pool": self.pool}

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentSpec":
        return cls(d["kind"], d["env_id"], dict(d["coeffs"]), dict(d["forcing"]),
                   dict(d["domain"]), d["pool"])

    @property
    def degrees(self) -> int:
        return DEGREES[self.kind]


def _domain(kind: str) -> dict:
    if kind == "pendulum":
        return {}
    if kind == "gray_scott":
        return {"extent": 64.0, "points": 32, "periodic": True}
    if kind == "burgers":
        return {"extent": 2 * np.pi, "periodic": True}
    return {"extent": 16.0, "periodic": True}


# discrete pools ---------------------------------------------------------------

def _pendulum_pool(pool: str) -> list[tuple[dict, dict]]:
    out = []
    if pool == "train":
        # Training environments are either damped or driven, never both.
        for w0, a in itertools.product((0.5, 0.7), (0.2, 0.5)):
            out.append({"omega0": w0, "alpha": a, "F": 0.0, "w_f": 0.0})
        for w0, F, wf in itertools.product((0.5, 0.7), (0.1, 0.2), (0.0, 0.75, 1.0)):
            out.append({"omega0": w0, "alpha": 0.0, "F": F, "w_f": wf})
    else:
        for w0, wf, F, a in itertools.product((0.5, 0.75, 1.0), (0.3, 0.5, 0.7, 1.0),
                                              (0.05, 0.1, 0.15, 0.2), (0.1, 0.5)):
            out.append({"omega0": w0, "alpha": a, "F": F, "w_f": wf})
    return [(c, {"tag": "cos", "F": c["F"], "w_f": c["w_f"]}) for c in out]


def _gray_scott_pool(pool: str):
    Fs, ks = ((0.03, 0.039), (0.058, 0.062)) if pool == "train" else ((0.025, 0.042), (0.050, 0.065))
    return [({"F": F, "k": k}, {"tag": "none"}) for F, k in itertools.product(Fs, ks)]


def _burgers_pool(pool: str):
    out = []
    if pool == "train":
        for nu, on in itertools.product((5e-1, 5e-2, 5e-4), (True, False)):
            forcing = ({"tag": "sincos", "F": BURGERS_F, "w_f": BURGERS_WF_TRAIN} if on
                       else {"tag": "none"})
            out.append(({"nu": nu}, forcing))
    else:
        for nu, wf in itertools.product((1.0, 5e-5), (1.5, 3.0)):
            out.append(({"nu": nu}, {"tag": "gauss", "F": BURGERS_F, "w_f": wf}))
    return out


_POOLS = {"pendulum": _pendulum_pool, "gray_scott": _gray_scott_pool, "burgers": _burgers_pool}


def discrete_pool(kind: str, pool: str) -> list[EnvironmentSpec]:
    """Every environment of a finite pool, in canonical order."""
    if kind not in _POOLS:
        raise ValueError(f"{kind!r} has no discrete pool")
    return [EnvironmentSpec(kind, f"{pool}-{i:03d}", c, f, _domain(kind), pool)
            for i, (c, f) in enumerate(_POOLS[kind](pool))]


# continuous ranges ------------------------------------------------------------------

RANGES = {
    "pendulum": {"omega0": (0.5, 1.0), "alpha": (0.0, 0.5), "F": (0.0, 0.2), "w_f": (0.3, 1.0)},
    "gray_scott": {"F": (0.03, 0.04), "k": (0.058, 0.062)},
    "burgers": {"nu": (1e-4, 0.5)},
    "combined": {"alpha": (0.5, 1.0), "beta": (0.0, 0.5), "delta": (0.0, 1.0), "gamma": (0.0, 1.0)},
}


def _draw(kind: str, rng: np.random.Generator) -> tuple[dict, dict]:
    c = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in RANGES[kind].items()}
    if kind == "pendulum":
        return c, {"tag": "cos", "F": c["F"], "w_f": c["w_f"]}
    if kind == "burgers":
        on = bool(rng.integers(0, 2))
        f = {"tag": "sincos", "F": BURGERS_F, "w_f": BURGERS_WF_TRAIN} if on else {"tag": "none"}
        return c, f
    return c, {"tag": "none"}


_N_TRAIN_GUARD = 4096


def _continuous(kind: str, n: int, pool: str, seed: int) -> list[EnvironmentSpec]:
    rng = stream(seed, "envs", kind, pool)
    taken = set()
    if pool == "adapt":
        tr = stream(seed, "envs", kind, "train")
        taken = {tuple(sorted(_draw(kind, tr)[0].items())) for _ in range(_N_TRAIN_GUARD)}
    out = []
    while len(out) < n:
        c, f = _draw(kind, rng)
        key = tuple(sorted(c.items()))
        if key in taken:
            continue  # re-draw on collision with a training environment
        taken.add(key)
        out.append(EnvironmentSpec(kind, f"{pool}-c{len(out):03d}", c, f, _domain(kind), pool))
    return out


def sample_environments(kind: str, n: int, pool: str = "train", seed: int = 0,
                        mode: str | None = None) -> list[EnvironmentSpec]:
    """Draw ``n`` environments of a system.

    ``mode="discrete"`` takes a seeded permutation of the finite pool, so the
    first ``m`` environments of a size-``n`` draw equal a size-``m`` draw.
    ``mode="continuous"`` samples the parameter ranges uniformly.  The
    combined equation only has a continuous mode (its default).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown system {kind!r}")
    if pool not in POOLS:
        raise ValueError(f"pool must be one of {POOLS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    mode = mode or ("continuous" if kind == "combined" else "discrete")
    if mode == "continuous":
        return _continuous(kind, n, pool, seed)
    if mode != "discrete":
        raise ValueError("mode must be 'discrete' or 'continuous'")
    envs = discrete_pool(kind, pool)
    if n > len(envs):
        raise ValueError(f"{kind} {pool} pool has only {len(envs)} environments, asked for {n}")
    order = stream(seed, "envs", kind, pool).permutation(len(envs))
    return [envs[i] for i in order[:n]]
