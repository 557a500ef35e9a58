"""Uniform B-spline grids and basis evaluation.

All evaluation routines are vectorised: ``x`` may be a scalar or an array of
any shape, and the basis axis is appended last.  Inputs are clamped to
``[lo, hi]`` before evaluation, so there is no dead zone outside the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class KnotGrid:
    lo: float
    hi: float
    G: int
    k: int
    knots: np.ndarray = field(repr=False, compare=False)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.G

    @property
    def n_basis(self) -> int:
        return self.G + self.k

    def support(self, i: int) -> tuple[float, float]:
        """Closed interval outside of which basis ``i`` is identically zero."""
        return float(self.knots[i]), float(self.knots[i + self.k + 1])

    def clamp(self, x):
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)

    def span(self, x) -> np.ndarray:
        """Knot-interval index ``s`` with ``knots[s] <= x < knots[s+1]`` (last interval closed)."""
        xc = self.clamp(x)
        k, G, t = self.k, self.G, self.knots
        j = np.floor((xc - self.lo) / self.h).astype(np.int64)
        j = np.clip(j, 0, G - 1)
        # repair floor() rounding at knot boundaries
        j = np.where((xc < t[j + k]) & (j > 0), j - 1, j)
        j = np.where((xc >= t[j + k + 1]) & (j < G - 1), j + 1, j)
        return j + k

    def active_window(self, x) -> tuple[int, int]:
        """First and last index of the basis functions that may be nonzero at ``x``."""
        s = int(self.span(x))
        return s - self.k, s


def build_grid(lo: float, hi: float, G: int, k: int) -> KnotGrid:
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise GridError(f"grid bounds must be finite, got [{lo}, {hi}]")
    if not lo < hi:
        raise GridError(f"need lo < hi, got [{lo}, {hi}]")
    if int(G) != G or G < 1:
        raise GridError(f"grid size G must be a positive integer, got {G}")
    if int(k) != k or k < 0:
        raise GridError(f"spline order k must be a non-negative integer, got {k}")
    G, k = int(G), int(k)
    steps = np.arange(-k, G + k + 1, dtype=np.float64)
    knots = float(lo) + (float(hi) - float(lo)) * (steps / G)
    knots.setflags(write=False)
    return KnotGrid(float(lo), float(hi), G, k, knots)


def _local_basis(xc: np.ndarray, s: np.ndarray, t: np.ndarray, degree: int, keep_lower: bool = False):
    """Nonzero basis values of ``degree`` on span ``s``; returns shape (..., degree+1).

    Entry r corresponds to basis index ``s - degree + r``. With ``keep_lower``
    the degree-1 values from the last-but-one step are returned as well.
    """
    # one contiguous array per entry; strided slices of a stacked array are much slower
    N = [np.ones(xc.shape)]
    left, right = [None], [None]
    lower = None
    for d in range(1, degree + 1):
        if keep_lower and d == degree:
            lower = np.stack(N, axis=-1)
        left.append(xc - t[s + 1 - d])
        right.append(t[s + d] - xc)
        saved = np.zeros(xc.shape)
        for r in range(d):
            temp = N[r] / (right[r + 1] + left[d - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[d - r] * temp
        N.append(saved)
    out = np.stack(N, axis=-1)
    return (out, lower) if keep_lower else out


def _scatter(local: np.ndarray, first: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(first.shape + (n,))
    idx = first[..., None] + np.arange(local.shape[-1])
    np.put_along_axis(out, idx, local, axis=-1)
    return out


def local_basis(x, grid: KnotGrid) -> tuple[np.ndarray, np.ndarray]:
    """Compact form of :func:`basis_eval`: ``(values[..., k+1], first_index[...])``."""
    xc = grid.clamp(x)
    _check_finite(xc)
    s = grid.span(xc)
    return _local_basis(xc, s, grid.knots, grid.k), s - grid.k


def basis_eval(x, grid: KnotGrid) -> np.ndarray:
    """Values of all ``G+k`` basis functions at ``x`` (clamped to the grid domain)."""
    vals, first = local_basis(x, grid)
    return _scatter(vals, first, grid.n_basis)


def _slopes(lower: np.ndarray, grid: KnotGrid) -> np.ndarray:
    """Derivatives of the k+1 nonzero order-k functions from the k order-(k-1) values on the same span."""
    k, t = grid.k, grid.knots
    padded = np.zeros(lower.shape[:-1] + (k + 2,))
    padded[..., 1:k + 1] = lower  # padded[r] holds B_{s-k+r, k-1}
    # knots are uniform, so every k / (t[i+k] - t[i]) is the same number
    c = k / (t[k] - t[0])
    return c * (padded[..., :k + 1] - padded[..., 1:k + 2])


def local_basis_with_slopes(x, grid: KnotGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compact values and x-derivatives of the nonzero basis functions, plus the first index."""
    if grid.k == 0:
        raise GridError("basis derivative is not supported for order k=0")
    xc = grid.clamp(x)
    _check_finite(xc)
    s = grid.span(xc)
    vals, lower = _local_basis(xc, s, grid.knots, grid.k, keep_lower=True)
    return vals, _slopes(lower, grid), s - grid.k


def basis_derivative(x, grid: KnotGrid) -> np.ndarray:
    """d/dx of every basis function, evaluated at the clamped ``x``."""
    _, slopes, first = local_basis_with_slopes(x, grid)
    return _scatter(slopes, first, grid.n_basis)


def spline_eval(x, grid: KnotGrid, coef) -> np.ndarray | float:
    coef = np.asarray(coef, dtype=np.float64)
    if coef.shape != (grid.n_basis,):
        raise GridError(f"expected {grid.n_basis} coefficients, got shape {coef.shape}")
    vals, first = local_basis(x, grid)
    idx = first[..., None] + np.arange(grid.k + 1)
    out = np.sum(vals * coef[idx], axis=-1)
    return float(out) if out.ndim == 0 else out


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise GridError("spline input contains NaN or inf")
