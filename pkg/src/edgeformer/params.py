"""Named, ordered collection of trainable arrays."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .autodiff import Tensor
from .exceptions import DimensionError, ValidationError


class ParamStore:
    """Ordered ``name -> float64 array`` map with fixed shapes.

    Iteration order is insertion order, which every consumer (optimizer,
    checkpoint writer, gradient check) relies on for determinism.
    """

    def __init__(self, items: Iterable[tuple[str, np.ndarray]] = ()):
        self._data: dict[str, np.ndarray] = {}
        for name, value in items:
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._data:
            raise ValidationError(f"duplicate parameter name {name!r}")
        self._data[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._data:
            raise KeyError(f"unknown parameter {name!r}; use add() for new tensors")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._data[name].shape:
            raise DimensionError(f"{name}: shape {value.shape} != fixed shape {self._data[name].shape}")
        self._data[name] = value.copy()

    def __contains__(self, name: object) -> bool:
        return name in self._data

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def names(self) -> list[str]:
        return list(self._data)

    def items(self):
        return self._data.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._data.items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self._data.values()))

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self._data.items())

    def subset(self, names: Iterable[str]) -> "ParamStore":
        return ParamStore((k, self._data[k].copy()) for k in names)

    def leaves(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Wrap every array as an autodiff leaf (a read-only view, no copy)."""
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self._data.items()}

    def equal(self, other: "ParamStore") -> bool:
        """Bitwise equality of names, order, shapes and values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k], other[k]) and self[k].shape == other[k].shape for k in self)

    def __repr__(self) -> str:
        return f"ParamStore({len(self)} tensors, {self.n_params()} values)"
