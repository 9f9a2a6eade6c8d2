"""Context-modulated low-rank layers and the per-environment context table.

A layer holds shared arrays ``W (d_in, d_out)``, ``A (d_in, r)``,
``B (r, d_out)``, ``b1 (d_out,)`` and ``b2 (r, d_out)``.  For a context
``c`` its weight is ``W + A diag(c) B`` and its bias ``b1 + c @ b2``.  One
context vector per environment drives every layer of a model.

All functions accept ndarrays or :class:`~geps.diffcore.Tensor` values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from geps.diffcore import tensor as T
from geps.diffcore.params import ParamStore

CTX_PREFIX = "ctx/"


@dataclass(frozen=True)
class AdaptiveLayerParams:
    W: object
    A: object
    B: object
    b1: object
    b2: object

    def __post_init__(self):
        d_in, d_out = np.shape(T.value(self.W))
        r = np.shape(T.value(self.A))[1]
        expected = {"A": (d_in, r), "B": (r, d_out), "b1": (d_out,), "b2": (r, d_out)}
        for name, shape in expected.items():
            got = np.shape(T.value(getattr(self, name)))
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")
        if r < 1:
            raise ValueError("context dimension r must be >= 1")

    @property
    def d_in(self) -> int:
        return np.shape(T.value(self.W))[0]

    @property
    def d_out(self) -> int:
        return np.shape(T.value(self.W))[1]

    @property
    def r(self) -> int:
        return np.shape(T.value(self.A))[1]

    @classmethod
    def from_mapping(cls, p: Mapping, prefix: str) -> "AdaptiveLayerParams":
        return cls(p[prefix + "W"], p[prefix + "A"], p[prefix + "B"],
                   p[prefix + "b1"], p[prefix + "b2"])


def _check_context(layer: AdaptiveLayerParams, c) -> None:
    shape = np.shape(T.value(c))
    if not shape or shape[-1] != layer.r or len(shape) > 2:
        raise ValueError(f"context of shape {shape} does not match r={layer.r}")


def effective_weight(layer: AdaptiveLayerParams, c):
    """``W + A diag(c) B``."""
    _check_context(layer, c)
    if np.ndim(T.value(c)) != 1:
        raise ValueError("effective_weight takes a single context vector")
    return T.add(layer.W, T.matmul(T.mul(layer.A, c), layer.B))


def adaptive_linear_forward(x, layer: AdaptiveLayerParams, c):
    """Affine map of the last axis of ``x`` under context ``c``.

    ``c`` is an ``(r,)`` vector, an ``(n, r)`` matrix with one row per leading
    sample of ``x``, or ``None`` for the unconditioned layer.  The low-rank
    term is evaluated as ``((x A) * c) B`` so per-sample contexts need no
    per-sample weight matrices.
    """
    if np.shape(T.value(x))[-1] != layer.d_in:
        raise ValueError(f"input width {np.shape(T.value(x))[-1]} != d_in {layer.d_in}")
    y = T.add(T.matmul(x, layer.W), layer.b1)
    if c is None:
        return y
    _check_context(layer, c)
    cb = c
    xnd = np.ndim(T.value(x))
    if np.ndim(T.value(c)) == 2 and xnd > 2:
        n, r = np.shape(T.value(c))
        cb = T.reshape(c, (n,) + (1,) * (xnd - 2) + (r,))
    delta = T.matmul(T.mul(T.matmul(x, layer.A), cb), layer.B)
    return T.add(T.add(y, delta), T.matmul(cb, layer.b2))


def unfold(x_cl, kernel: int, spatial_rank: int):
    """Circular patches of a channels-last field, flattened over space."""
    if spatial_rank == 1:
        return T.unfold1d(x_cl, kernel)
    if spatial_rank == 2:
        return T.unfold2d(x_cl, kernel)
    raise ValueError("spatial rank must be 1 or 2")


def conv_forward_cl(x_cl, layer: AdaptiveLayerParams, c, kernel: int, spatial_rank: int):
    """Adaptive circular convolution on channels-last ``(n, *space, C_in)``."""
    shape = np.shape(T.value(x_cl))
    n, space, c_in = shape[0], shape[1:-1], shape[-1]
    if len(space) != spatial_rank:
        raise ValueError(f"expected {spatial_rank} spatial axes, got {len(space)}")
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError("kernel size must be odd")
    if layer.d_in != c_in * kernel ** spatial_rank:
        raise ValueError(
            f"layer d_in {layer.d_in} != C_in*kernel^{spatial_rank} = {c_in * kernel ** spatial_rank}")
    cols = unfold(x_cl, kernel, spatial_rank)  # n, P, k^d * C_in
    y = adaptive_linear_forward(cols, layer, c)  # n, P, C_out
    return T.reshape(y, (n,) + tuple(space) + (layer.d_out,))


def adaptive_conv_forward(x, layer: AdaptiveLayerParams, c, spatial_rank: int, kernel: int):
    """Channels-first ``(n, C_in, *space)`` -> ``(n, C_out, *space)``.

    The flattened kernel matrix is ``effective_weight(layer, c)`` with rows
    ordered tap-major (tap offset, then input channel).  Boundaries wrap.
    """
    nd = np.ndim(T.value(x))
    if nd != spatial_rank + 2:
        raise ValueError(f"expected input of rank {spatial_rank + 2}")
    to_cl = (0,) + tuple(range(2, nd)) + (1,)
    to_cf = (0, nd - 1) + tuple(range(1, nd - 1))
    y = conv_forward_cl(T.transpose(x, to_cl), layer, c, kernel, spatial_rank)
    return T.transpose(y, to_cf)


class UnknownEnvironmentError(KeyError):
    pass


class ContextTable:
    """Environment id -> context vector, all of the same dimension ``r``."""

    def __init__(self, r: int, contexts: Mapping[str, np.ndarray] | None = None):
        if r < 1:
            raise ValueError("r must be >= 1")
        self.r = r
        self._ctx: dict[str, np.ndarray] = {}
        for env, vec in (contexts or {}).items():
            self.set(env, vec)

    def set(self, env_id: str, vec) -> None:
        vec = np.array(vec, dtype=np.float64).reshape(-1)
        if vec.shape != (self.r,):
            raise ValueError(f"context for {env_id!r} has size {vec.size}, expected {self.r}")
        self._ctx[str(env_id)] = vec

    def __getitem__(self, env_id) -> np.ndarray:
        try:
            return self._ctx[str(env_id)]
        except KeyError:
            raise UnknownEnvironmentError(f"no context for environment {env_id!r}") from None

    def __contains__(self, env_id) -> bool:
        return str(env_id) in self._ctx

    def __len__(self) -> int:
        return len(self._ctx)

    def env_ids(self) -> list[str]:
        return list(self._ctx)

    def mean(self) -> np.ndarray:
        if not self._ctx:
            raise ValueError("empty context table")
        return np.mean(np.stack(list(self._ctx.values())), axis=0)

    def to_params(self) -> dict[str, np.ndarray]:
        return {CTX_PREFIX + e: v for e, v in self._ctx.items()}

    @classmethod
    def from_params(cls, params) -> "ContextTable":
        names = [n for n in params if n.startswith(CTX_PREFIX)]
        if not names:
            raise ValueError("parameter store holds no contexts")
        r = np.shape(params[names[0]])[0]
        return cls(r, {n[len(CTX_PREFIX):]: params[n] for n in names})


def ctx_name(env_id) -> str:
    return CTX_PREFIX + str(env_id)


def context_init_training(r: int, env_ids: Iterable) -> ContextTable:
    env_ids = [str(e) for e in env_ids]
    if len(set(env_ids)) != len(env_ids):
        raise ValueError("duplicate environment ids")
    return ContextTable(r, {e: np.zeros(r) for e in env_ids})


def context_init_adaptation(trained: ContextTable, new_env_ids: Iterable) -> ContextTable:
    """New contexts start at the mean of the trained ones."""
    if len(trained) == 0:
        raise ValueError("cannot initialise from an empty context table")
    new_env_ids = [str(e) for e in new_env_ids]
    if len(set(new_env_ids)) != len(new_env_ids):
        raise ValueError("duplicate environment ids")
    mean = trained.mean()
    return ContextTable(trained.r, {e: mean.copy() for e in new_env_ids})


def contexts_of(params: ParamStore) -> ContextTable:
    return ContextTable.from_params(params)
