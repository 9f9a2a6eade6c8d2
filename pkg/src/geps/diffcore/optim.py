"""Adam and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geps.diffcore.params import ParamStore


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: ParamStore, grads: dict, state: AdamState,
              lr: float) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update of every non-frozen entry.

    Returns a new store and state; frozen arrays are carried over by reference.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    m_new, v_new, updates = dict(state.m), dict(state.v), {}
    for name in params.trainable():
        if name not in grads:
            raise KeyError(f"gradient missing for trainable parameter {name!r}")
        g = grads[name]
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name!r} {p.shape}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * (g * g)
        m_new[name], v_new[name] = m, v
        updates[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    new_state = AdamState(m_new, v_new, t, b1, b2, state.eps)
    return params.replace(updates), new_state


def plateau_schedule(lr: float, best_loss: float, current_loss: float,
                     epochs_since_improve: int, threshold: float = 0.01,
                     patience: int = 250, decay: float = 0.9,
                     min_lr: float = 1e-5) -> tuple[float, float, int]:
    """Advance the plateau schedule by one epoch.

    An epoch counts as an improvement when ``current < best * (1 - threshold)``.
    After ``patience`` consecutive non-improving epochs the rate decays (never
    below ``min_lr``) and the counter restarts.  Returns
    ``(lr, best_loss, epochs_since_improve)``.
    """
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie in (0, 1)")
    if current_loss < best_loss * (1.0 - threshold):
        return lr, current_loss, 0
    epochs_since_improve += 1
    best_loss = min(best_loss, current_loss)
    if epochs_since_improve >= patience:
        return max(lr * decay, min_lr), best_loss, 0
    return lr, best_loss, epochs_since_improve


class PlateauScheduler:
    def __init__(self, lr: float, threshold=0.01, patience=250, decay=0.9, min_lr=1e-5):
        self.lr = lr
        self.threshold, self.patience = threshold, patience
        self.decay, self.min_lr = decay, min_lr
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, loss: float) -> float:
        self.lr, self.best, self.bad_epochs = plateau_schedule(
            self.lr, self.best, loss, self.bad_epochs, self.threshold,
            self.patience, self.decay, self.min_lr)
        return self.lr
