"""Dense float64 array helpers and seeded random generators.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  The helpers
here add the shape checks and error messages the layers rely on; anything
not listed is done with numpy directly.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """Raised when a computation produces NaN or infinite values."""


def tensor(data, shape=None) -> np.ndarray:
    """Build a contiguous float64 array, optionally reshaped (row-major)."""
    arr = np.array(data, dtype=DTYPE, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    return arr


def check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {where}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_UNARY = {
    "silu": silu,
    "relu": relu,
    "sigmoid": sigmoid,
    "exp": np.exp,
    "tanh": np.tanh,
}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a, op: str, b=None) -> np.ndarray:
    """Apply ``op`` pointwise.  Binary ops accept equal shapes or a scalar ``b``."""
    a = tensor(a)
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} is unary")
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ValueError(f"{op} needs a second operand")
    b = tensor(b)
    if b.ndim != 0 and b.shape != a.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")
    return _BINARY[op](a, b)


def reduce(a, op: str, axis: int | None = None) -> np.ndarray:
    """Reduce along ``axis`` (all axes if None).  argmax ties go to the lowest index."""
    a = tensor(a)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    if op == "sum":
        return np.sum(a, axis=axis)
    if op == "max":
        return np.max(a, axis=axis)
    if op == "argmax":
        # numpy returns the first occurrence of the maximum
        return np.argmax(a, axis=axis)
    raise ValueError(f"unknown reduction {op!r}")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; same seed gives the same stream on every platform."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def child_seeds(seed: int, n: int) -> list[int]:
    """Independent 63-bit seeds derived from ``seed``."""
    ss = np.random.SeedSequence(int(seed))
    return [int(s.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for s in ss.spawn(n)]
