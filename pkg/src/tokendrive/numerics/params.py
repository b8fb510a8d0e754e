"""Named parameter storage with per-parameter gradient buffers."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from tokendrive.errors import DimensionError, ParameterError
from tokendrive.numerics.autograd import Tensor
from tokendrive.numerics.rng import RngStream


class ParamStore:
    """Ordered mapping ``name -> Tensor`` of trainable leaves.

    Names are dotted paths whose first component is the owning module,
    e.g. ``sparsify.local.0.w``.
    """

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ParameterError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def grad_vector(self, prefix: str = "") -> np.ndarray:
        parts = [self.grad(n).ravel() for n in self.names(prefix)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self._params.items())

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise ParameterError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            t = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.data.shape:
                raise DimensionError(f"'{name}': stored shape {value.shape} != {t.data.shape}")
            t.data = value.copy()

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for n, t in self._params.items():
            other.add(n, t.data)
        return other


class Initializer:
    """Draws initial parameter values from a single counter-based stream."""

    def __init__(self, rng: RngStream):
        self.rng = rng

    def normal(self, shape, std: float) -> np.ndarray:
        return self.rng.normal(shape, std)

    def fan_in(self, fan_in: int, fan_out: int) -> np.ndarray:
        return self.rng.normal((fan_in, fan_out), 1.0 / np.sqrt(fan_in))
