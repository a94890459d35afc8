"""Named, ordered collections of weight tensors."""
from __future__ import annotations

import hashlib
from typing import Iterator, Mapping

import numpy as np

from .rng import INIT_SCALE, init_tensor


class ParamStore(Mapping[str, np.ndarray]):
    """Ordered ``name -> float64 array`` map for one network.

    Insertion order is the checkpoint order. ``prefix`` namespaces the
    initialisation stream so two stores with identical layouts (e.g. two
    tracks) start from different weights.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._t: dict[str, np.ndarray] = {}
        for k, v in (tensors or {}).items():
            self._t[k] = np.array(v, dtype=np.float64)

    @classmethod
    def initialise(cls, shapes: Mapping[str, tuple], seed: int, prefix: str = "",
                   scale: float = INIT_SCALE) -> "ParamStore":
        return cls({name: init_tensor(seed, prefix + name, shape, scale) for name, shape in shapes.items()})

    @classmethod
    def zeros(cls, shapes: Mapping[str, tuple]) -> "ParamStore":
        return cls({name: np.zeros(shape) for name, shape in shapes.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __setitem__(self, name: str, value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        if name in self._t and value.shape != self._t[name].shape:
            raise ValueError(f"{name}: shape {value.shape} != {self._t[name].shape}")
        self._t[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def __repr__(self):
        return f"ParamStore({len(self)} tensors, {self.size} values)"

    @property
    def size(self) -> int:
        return sum(v.size for v in self._t.values())

    def copy(self) -> "ParamStore":
        return ParamStore(self._t)

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw bytes, in order."""
        h = hashlib.sha256()
        for name, arr in self._t.items():
            h.update(name.encode())
            h.update(repr(arr.shape).encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def equal(self, other: "ParamStore") -> bool:
        return list(self) == list(other) and all(np.array_equal(self[k], other[k]) for k in self)
