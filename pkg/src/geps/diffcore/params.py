"""Parameter registry and initializers."""

from __future__ import annotations

import hashlib
from typing import Iterable, Iterator, Mapping

import numpy as np

from geps.diffcore import container
from geps.diffcore.rng import stream

GradientMap = dict  # name -> ndarray, same shapes as the ParamStore entries


class ParamStore:
    """Ordered registry of named float64 arrays plus a frozen-name set.

    Arrays are stored read-only.  Updates never happen in place:
    :meth:`replace` returns a new store that shares every untouched array with
    the old one, which is what makes frozen entries bit-identical across
    optimizer steps.
    """

    def __init__(self, entries: Mapping[str, np.ndarray] | None = None,
                 frozen: Iterable[str] = ()):
        self._entries: dict[str, np.ndarray] = {}
        for name, arr in (entries or {}).items():
            self.add(name, arr)
        self._frozen = frozenset(frozen)
        unknown = self._frozen - self._entries.keys()
        if unknown:
            raise KeyError(f"cannot freeze unknown parameters: {sorted(unknown)}")

    def add(self, name: str, array) -> None:
        """Register a new entry (construction time only)."""
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(array, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        self._entries[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    @property
    def frozen(self) -> frozenset:
        return self._frozen

    def trainable(self) -> list[str]:
        return [n for n in self._entries if n not in self._frozen]

    def shapes(self) -> dict[str, tuple]:
        return {n: a.shape for n, a in self._entries.items()}

    def freeze(self, names: Iterable[str]) -> "ParamStore":
        return self._with_frozen(self._frozen | set(names))

    def unfreeze(self, names: Iterable[str]) -> "ParamStore":
        return self._with_frozen(self._frozen - set(names))

    def freeze_all_except(self, names: Iterable[str]) -> "ParamStore":
        keep = set(names)
        return self._with_frozen(n for n in self._entries if n not in keep)

    def _with_frozen(self, frozen) -> "ParamStore":
        new = ParamStore.__new__(ParamStore)
        new._entries = dict(self._entries)
        new._frozen = frozenset(frozen)
        unknown = new._frozen - new._entries.keys()
        if unknown:
            raise KeyError(f"cannot freeze unknown parameters: {sorted(unknown)}")
        return new

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParamStore":
        """New store with some arrays swapped; shapes must not change."""
        new = ParamStore.__new__(ParamStore)
        new._entries = dict(self._entries)
        new._frozen = self._frozen
        for name, arr in updates.items():
            if name not in self._entries:
                raise KeyError(f"unknown parameter {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self._entries[name].shape:
                raise ValueError(
                    f"shape of {name!r} is immutable: {self._entries[name].shape} -> {arr.shape}")
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
            new._entries[name] = arr
        return new

    def merged(self, other: "ParamStore") -> "ParamStore":
        """Union of two stores with disjoint names."""
        clash = self._entries.keys() & other._entries.keys()
        if clash:
            raise KeyError(f"duplicate parameter names: {sorted(clash)}")
        new = ParamStore.__new__(ParamStore)
        new._entries = {**self._entries, **other._entries}
        new._frozen = self._frozen | other._frozen
        return new

    def without(self, names: Iterable[str]) -> "ParamStore":
        drop = set(names)
        return ParamStore({n: a for n, a in self._entries.items() if n not in drop},
                          frozen=self._frozen - drop)

    def num_params(self, names: Iterable[str] | None = None) -> int:
        names = self._entries if names is None else names
        return int(sum(self._entries[n].size for n in names))

    def checksum(self, names: Iterable[str] | None = None) -> str:
        h = hashlib.sha256()
        for n in (self._entries if names is None else names):
            a = self._entries[n]
            h.update(n.encode())
            h.update(repr(a.shape).encode())
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def save(self, path, meta: Mapping | None = None) -> None:
        meta = dict(meta or {})
        meta["frozen"] = sorted(self._frozen)
        container.write(path, self._entries, meta)

    @classmethod
    def load(cls, path) -> tuple["ParamStore", dict]:
        arrays, meta = container.read(path)
        return cls(arrays, frozen=meta.get("frozen", ())), meta

    def __repr__(self) -> str:
        return f"ParamStore({len(self)} entries, {self.num_params()} values, {len(self._frozen)} frozen)"


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, "orthogonal")


def orthogonal_init(rows: int, cols: int, seed) -> np.ndarray:
    """Orthonormal columns if ``rows >= cols``, orthonormal rows otherwise."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = _rng(seed)
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return q if rows >= cols else q.T.copy()


def kaiming_normal(rows: int, cols: int, rng: np.random.Generator,
                   fan_in: int | None = None) -> np.ndarray:
    fan_in = rows if fan_in is None else fan_in
    return rng.standard_normal((rows, cols)) * np.sqrt(2.0 / fan_in)


def xavier_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def lowrank_pair(kind: str, d_in: int, r: int, d_out: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Initial ``(A, B)`` for one adaptive layer under an init scheme.

    ``lora`` draws A from N(0, 1/r^2) and zeros B, as in the usual LoRA recipe.
    """
    if kind == "orthogonal":
        return orthogonal_init(d_in, r, rng), orthogonal_init(r, d_out, rng)
    if kind == "kaiming":
        return kaiming_normal(d_in, r, rng), kaiming_normal(r, d_out, rng)
    if kind == "xavier":
        return xavier_uniform(d_in, r, rng), xavier_uniform(r, d_out, rng)
    if kind == "lora":
        return rng.standard_normal((d_in, r)) / r, np.zeros((r, d_out))
    raise ValueError(f"unknown init scheme {kind!r}")


INIT_SCHEMES = ("kaiming", "xavier", "lora", "orthogonal")
