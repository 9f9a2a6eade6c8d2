"""Known physics plus a context-conditioned neural correction.

Physical coefficients live in the same parameter mapping as the network:

* strategy 1: shared ``phys/theta`` (n_coeff,) and projection ``phys/Wp``
  (r, n_coeff); environment ``e`` uses ``theta + c_e @ Wp``.
* strategy 2: one free vector ``phys/<env>`` per environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from geps.backbones import Model, model_forward
from geps.diffcore import tensor as T
from geps.dynamics import physics

PHYS_PREFIX = "phys/"
THETA = PHYS_PREFIX + "theta"
WP = PHYS_PREFIX + "Wp"
MODES = ("additive", "composed")


class UnresolvedPhysicsError(KeyError):
    pass


def phys_name(env_id) -> str:
    return f"{PHYS_PREFIX}env/{env_id}"


@dataclass(frozen=True)
class HybridModel:
    kind: str
    net: Model | None
    strategy: int = 2
    mode: str = "additive"
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in physics.COEFFICIENTS:
            raise ValueError(f"unknown system {self.kind!r}")
        if self.strategy not in (1, 2):
            raise ValueError("strategy must be 1 or 2")
        if self.mode not in MODES:
            raise ValueError(f"combination mode must be one of {MODES}")
        if self.net is not None and self.mode == "composed":
            need = 2 * physics.CHANNELS[self.kind]
            if self.net.spec.in_channels != need:
                raise ValueError(f"composed mode needs {need} input channels")

    @property
    def coeff_names(self) -> tuple[str, ...]:
        return physics.COEFFICIENTS[self.kind]

    @property
    def channel_axis(self) -> int:
        return -(physics.SPATIAL_RANK[self.kind] + 1)


def init_physics_params(kind: str, strategy: int, r: int, env_ids: Sequence = (),
                        init: Sequence[float] | None = None) -> dict[str, np.ndarray]:
    theta = np.array(physics.INITIAL_COEFFICIENTS[kind] if init is None else init, dtype=float)
    if strategy == 1:
        return {THETA: theta, WP: np.zeros((r, theta.size))}
    return {phys_name(e): theta.copy() for e in env_ids}


def physics_params_for_env(h: HybridModel, params: Mapping, env_id, c=None) -> dict:
    """Coefficients for one environment, or for a batch.

    ``env_id`` is a single id or a sequence of per-sample ids; in the batched
    case each returned coefficient is an ``(n,)`` array (and ``c`` should be
    ``(n, r)``).
    """
    batched = not isinstance(env_id, (str, int, np.integer))
    if h.strategy == 1:
        theta = params[THETA]
        if c is not None:
            theta = T.add(theta, T.matmul(c, params[WP]))
    else:
        ids = list(env_id) if batched else [env_id]
        missing = [e for e in dict.fromkeys(ids) if phys_name(e) not in params]
        if missing:
            raise UnresolvedPhysicsError(f"no physical parameters for environments {missing}")
        if batched:
            theta = T.stack([params[phys_name(e)] for e in ids], axis=0)
        else:
            theta = params[phys_name(env_id)]
    if np.ndim(T.value(theta)) == 2:
        return {name: T.getitem(theta, (slice(None), i)) for i, name in enumerate(h.coeff_names)}
    return {name: T.getitem(theta, i) for i, name in enumerate(h.coeff_names)}


def hybrid_rhs(h: HybridModel, params: Mapping, u, t, c, env_id):
    """``G_p(u) + G_a(u, c)`` (additive) or ``G_a([u, G_p(u)], c)`` (composed)."""
    theta = physics_params_for_env(h, params, env_id, c)
    gp = physics.known_physics(h.kind, u, theta, t, h.grid)
    if h.net is None:
        return gp
    if h.mode == "additive":
        return T.add(gp, model_forward(h.net, u, c, params))
    x = T.concat([u, gp], axis=h.channel_axis)
    return model_forward(h.net, x, c, params)


def coefficient_table(h: HybridModel, params: Mapping, env_ids: Sequence, contexts=None) -> dict:
    """Resolved coefficients per environment as plain floats."""
    out = {}
    for e in env_ids:
        c = None if contexts is None else np.asarray(contexts[e])
        vals = physics_params_for_env(h, params, e, c)
        out[str(e)] = {k: float(T.value(v)) for k, v in vals.items()}
    return out
