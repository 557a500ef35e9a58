from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    """Backward called without the matching forward cache."""


class GradientTape:
    """LIFO store of forward caches; each backward consumes exactly one entry."""

    def __init__(self):
        self._entries: list[tuple[int, object]] = []

    def push(self, layer: "Layer", cache) -> None:
        self._entries.append((id(layer), cache))

    def pop(self, layer: "Layer"):
        if not self._entries:
            raise TapeError(f"no cached forward for layer {layer.name!r}")
        owner, cache = self._entries[-1]
        if owner != id(layer):
            raise TapeError(f"tape top does not belong to layer {layer.name!r}")
        self._entries.pop()
        return cache

    def __len__(self) -> int:
        return len(self._entries)


class Layer:
    """Base class.  Subclasses fill ``params`` and ``trainable`` with matching keys."""

    kind = "layer"

    def __init__(self, name: str | None = None):
        self.name = name or self.kind
        self.params: dict[str, np.ndarray] = {}
        self.trainable: dict[str, bool] = {}

    def forward(self, x: np.ndarray, tape: GradientTape | None = None, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, tape: GradientTape, need_input_grad: bool = True):
        """Return ``(grad_x, grads)``; ``grads`` holds entries only for trainable params."""
        raise NotImplementedError

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if self.trainable.get(n, False)]

    def n_trainable(self) -> int:
        return sum(self.params[n].size for n in self.trainable_names())

    def state(self) -> dict[str, np.ndarray]:
        """Every array needed to restore the layer (parameters and buffers)."""
        return dict(self.params)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for key, value in arrays.items():
            if key not in self.params:
                raise KeyError(f"{self.name}: unexpected array {key!r}")
            if value.shape != self.params[key].shape:
                raise ValueError(f"{self.name}.{key}: shape {value.shape} != {self.params[key].shape}")
            self.params[key] = np.array(value, dtype=np.float64)

    def count_spec(self):
        """Accounting description of this layer, or None for parameter-free layers."""
        return None

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"
