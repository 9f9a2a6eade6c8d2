"""MLP and circular ConvNet backbones built from adaptive layers.

States are channel-first: ``(C,)`` for the MLP, ``(C, L)`` for ``conv1d`` and
``(C, H, W)`` for ``conv2d``, with an optional leading batch axis.
Internally conv stacks run channels-last so each layer is one unfold plus
one matmul.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from geps.condlayers import AdaptiveLayerParams, adaptive_linear_forward, conv_forward_cl
from geps.diffcore import tensor as T
from geps.diffcore.params import ParamStore, kaiming_normal, lowrank_pair
from geps.diffcore.rng import stream

KINDS = ("mlp", "conv1d", "conv2d")
_SPATIAL_RANK = {"mlp": 0, "conv1d": 1, "conv2d": 2}


def swish(x):
    """``x * sigmoid(x)``."""
    return T.swish(x)


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "mlp"
    depth: int = 4
    width: int = 64
    kernel: int = 3
    in_channels: int = 2
    out_channels: int = 2
    context_dim: int = 4
    init: str = "orthogonal"
    zero_final: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}; expected one of {KINDS}")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("width and channel counts must be >= 1")
        if self.kind != "mlp" and (self.kernel < 1 or self.kernel % 2 == 0):
            raise ValueError("kernel size must be odd and positive")
        if self.context_dim < 1:
            raise ValueError("context_dim must be >= 1")

    @property
    def spatial_rank(self) -> int:
        return _SPATIAL_RANK[self.kind]

    @property
    def taps(self) -> int:
        return 1 if self.kind == "mlp" else self.kernel ** self.spatial_rank

    def layer_dims(self) -> list[tuple[int, int]]:
        chans = [self.in_channels] + [self.width] * (self.depth - 1) + [self.out_channels]
        return [(chans[i] * self.taps, chans[i + 1]) for i in range(self.depth)]

    def to_dict(self) -> dict:
        return asdict(self)


def param_count(spec: BackboneSpec) -> int:
    """Closed-form number of shared scalars (contexts excluded)."""
    r = spec.context_dim
    return sum(di * do + di * r + r * do + do + r * do for di, do in spec.layer_dims())


@dataclass(frozen=True)
class Model:
    spec: BackboneSpec
    params: ParamStore
    prefix: str = "net/"

    def layer_prefixes(self) -> list[str]:
        return [f"{self.prefix}{i}/" for i in range(self.spec.depth)]

    def layers(self, p: Mapping | None = None) -> list[AdaptiveLayerParams]:
        p = self.params if p is None else p
        return [AdaptiveLayerParams.from_mapping(p, pre) for pre in self.layer_prefixes()]

    def shared_names(self) -> list[str]:
        return self.params.names(self.prefix)

    def with_params(self, params: ParamStore) -> "Model":
        return Model(self.spec, params, self.prefix)


def init_layers(spec: BackboneSpec, seed, prefix: str = "net/") -> dict[str, np.ndarray]:
    out = {}
    dims = spec.layer_dims()
    for i, (di, do) in enumerate(dims):
        rng = stream(seed, "init", prefix, i)
        W = kaiming_normal(di, do, rng)
        if spec.zero_final and i == len(dims) - 1:
            W = np.zeros_like(W)
        A, B = lowrank_pair(spec.init, di, spec.context_dim, do, rng)
        pre = f"{prefix}{i}/"
        out[pre + "W"] = W
        out[pre + "A"] = A
        out[pre + "B"] = B
        out[pre + "b1"] = np.zeros(do)
        out[pre + "b2"] = np.zeros((spec.context_dim, do))
    return out


def build_backbone(spec: BackboneSpec, seed, prefix: str = "net/") -> Model:
    return Model(spec, ParamStore(init_layers(spec, seed, prefix)), prefix)


def model_forward(model: Model, u, c, params: Mapping | None = None):
    """Apply the backbone to a state (or batch of states).

    ``c`` is an ``(r,)`` context, an ``(n, r)`` per-sample context, or
    ``None`` to evaluate the unconditioned network.  ``params`` overrides
    the model's own store, which is how gradients are taken.
    """
    spec = model.spec
    rank = spec.spatial_rank
    nd = np.ndim(T.value(u))
    batched = nd == rank + 2
    if not batched and nd != rank + 1:
        raise ValueError(f"{spec.kind} expects rank {rank + 1} or {rank + 2} input, got {nd}")
    x = u if batched else T.reshape(u, (1,) + np.shape(T.value(u)))
    if np.shape(T.value(x))[1] != spec.in_channels:
        raise ValueError(
            f"input has {np.shape(T.value(x))[1]} channels, backbone expects {spec.in_channels}")
    if c is not None and np.ndim(T.value(c)) == 2 and np.shape(T.value(c))[0] != np.shape(T.value(x))[0]:
        raise ValueError("per-sample contexts must match the batch size")

    if rank:
        x = T.transpose(x, (0,) + tuple(range(2, rank + 2)) + (1,))
    layers = model.layers(params)
    for i, layer in enumerate(layers):
        if rank:
            x = conv_forward_cl(x, layer, c, spec.kernel, rank)
        else:
            x = adaptive_linear_forward(x, layer, c)
        if i < len(layers) - 1:
            x = T.swish(x)
    if rank:
        x = T.transpose(x, (0, rank + 1) + tuple(range(1, rank + 1)))
    if not batched:
        x = T.reshape(x, np.shape(T.value(x))[1:])
    return x
