"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from geps.diffcore.params import ParamStore
from geps.diffcore.tensor import value, value_and_grad


def numeric_grad(loss_fn, store: ParamStore, h: float = 1e-5) -> dict:
    out = {}
    for name in store.trainable():
        base = store[name]
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += h
            minus[idx] -= h
            fp = float(value(loss_fn(store.replace({name: plus}))))
            fm = float(value(loss_fn(store.replace({name: minus}))))
            g[idx] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def max_grad_error(loss_fn, entries: dict, h: float = 1e-5, frozen=()) -> float:
    """Largest per-entry relative error between reverse mode and central differences."""
    store = ParamStore(entries, frozen)
    _, ga = value_and_grad(loss_fn, store)
    gn = numeric_grad(loss_fn, store, h)
    return max(rel_err(ga[n], gn[n]) for n in gn)
