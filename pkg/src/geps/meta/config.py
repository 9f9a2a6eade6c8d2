"""Training configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from geps.backbones import BackboneSpec
from geps.dynamics import physics

ADAPT_MODES = ("context", "extended", "context+physics", "finetune-last")
CONDITIONINGS = ("geps", "erm")
ROLLOUTS = ("node", "onestep")
BATCHING = ("mixed", "per_env")

# Per-system defaults: context size, batch size, teacher forcing, backbone.
KIND_DEFAULTS = {
    "pendulum": {"context_dim": 16, "batch_size": 8, "tf_window": 5, "backbone": "mlp",
                 "kernel": 1, "substeps": 10},
    "gray_scott": {"context_dim": 4, "batch_size": 4, "tf_window": 0, "backbone": "conv2d",
                   "kernel": 3, "substeps": 1},
    "burgers": {"context_dim": 4, "batch_size": 4, "tf_window": 0, "backbone": "conv1d",
                "kernel": 7, "substeps": 10},
    "combined": {"context_dim": 4, "batch_size": 4, "tf_window": 0, "backbone": "conv1d",
                 "kernel": 7, "substeps": 10},
}


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "pendulum"
    conditioning: str = "geps"
    # backbone
    depth: int = 4
    width: int = 64
    kernel: int | None = None
    context_dim: int | None = None
    init: str = "orthogonal"
    # rollout
    rollout: str = "node"
    history: int = 1
    substeps: int | None = None
    tf_window: int | None = None
    # optimisation
    batch_size: int | None = None
    batching: str = "mixed"
    epochs: int = 2000
    lr: float = 1e-2
    sched_threshold: float = 0.01
    sched_patience: int = 250
    sched_decay: float = 0.9
    sched_min_lr: float = 1e-5
    # hybrid
    hybrid: bool = False
    strategy: int = 2
    combine: str = "additive"
    # adaptation
    adapt_mode: str = "context"
    adapt_epochs: int = 500
    adapt_lr: float = 1e-2
    adapt_batch_size: int = 4
    adapt_patience: int = 50
    adapt_threshold: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KIND_DEFAULTS:
            raise ValueError(f"unknown system {self.kind!r}")
        d = KIND_DEFAULTS[self.kind]
        for name in ("kernel", "context_dim", "substeps", "tf_window", "batch_size"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, d[name])
        if self.conditioning not in CONDITIONINGS:
            raise ValueError(f"conditioning must be one of {CONDITIONINGS}")
        if self.rollout not in ROLLOUTS:
            raise ValueError(f"rollout must be one of {ROLLOUTS}")
        if self.batching not in BATCHING:
            raise ValueError(f"batching must be one of {BATCHING}")
        if self.adapt_mode not in ADAPT_MODES:
            raise ValueError(f"adapt_mode must be one of {ADAPT_MODES}")
        if self.rollout == "onestep" and self.hybrid:
            raise ValueError("hybrid models use the ODE rollout")
        for name in ("epochs", "batch_size", "substeps", "history", "adapt_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tf_window < 0 or self.adapt_epochs < 0:
            raise ValueError("tf_window and adapt_epochs must be non-negative")
        if self.lr <= 0 or self.adapt_lr <= 0:
            raise ValueError("learning rates must be positive")

    @property
    def conditioned(self) -> bool:
        return self.conditioning == "geps"

    def backbone_spec(self) -> BackboneSpec:
        C = physics.CHANNELS[self.kind]
        kind = KIND_DEFAULTS[self.kind]["backbone"]
        c_in = C * self.history
        if self.hybrid and self.combine == "composed":
            c_in = 2 * C
        return BackboneSpec(kind=kind, depth=self.depth, width=self.width,
                            kernel=self.kernel if kind != "mlp" else 1,
                            in_channels=c_in, out_channels=C, context_dim=self.context_dim,
                            init=self.init, zero_final=self.hybrid)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)
