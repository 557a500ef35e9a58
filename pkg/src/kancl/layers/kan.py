"""KAN layers: per-edge activations ``w_b*silu(x) + w_s*spline(x)`` summed at each node, plus ``beta``.

The spline part is computed in matrix form: inputs are expanded to a
``batch x (d_in*(G+k))`` basis matrix which is multiplied once against the
reshaped, scale-weighted coefficient tensor.
"""
from __future__ import annotations

import numpy as np

from .. import ndtensor as nd
from ..accounting import LayerCountSpec
from ..spline import KnotGrid, build_grid, local_basis, local_basis_with_slopes
from .base import GradientTape, Layer

MODES = ("pykan_full", "effkan", "cl")


def _dense(vals: np.ndarray, idx: np.ndarray, n_basis: int) -> np.ndarray:
    out = np.zeros(vals.shape[:-1] + (n_basis,))
    np.put_along_axis(out, idx, vals, axis=-1)
    return out


def _basis_matrix(x: np.ndarray, grid: KnotGrid) -> np.ndarray:
    """(B, d_in) -> (B, d_in, G+k) dense basis tensor."""
    vals, first = local_basis(x, grid)
    return _dense(vals, first[..., None] + np.arange(grid.k + 1), grid.n_basis)


SCALE_INITS = ("unit", "fan_in", "kaiming", "pykan")


def _init_scales(kind: str, shape, fan_in: int, rng: np.random.Generator):
    """Initial ``(w_s, w_b)``.

    ``unit``: both 1.  ``fan_in``: both ``1/sqrt(fan_in)``.  ``kaiming``: both
    uniform in ``+-1/sqrt(fan_in)``.  ``pykan``: ``w_s = 1/sqrt(fan_in)``,
    ``w_b`` uniform in ``+-1/sqrt(fan_in)``.
    """
    bound = 1.0 / np.sqrt(fan_in)
    if kind == "unit":
        return np.ones(shape), np.ones(shape)
    if kind == "fan_in":
        return np.full(shape, bound), np.full(shape, bound)
    if kind == "kaiming":
        w_s = rng.uniform(-bound, bound, size=shape)
        return w_s, rng.uniform(-bound, bound, size=shape)
    if kind == "pykan":
        return np.full(shape, bound), rng.uniform(-bound, bound, size=shape)
    raise ValueError(f"unknown scale_init {kind!r}; expected one of {SCALE_INITS}")


class KanLinear(Layer):
    """Fully connected KAN layer.

    ``mode`` fixes which terms exist and their default trainability:
    ``pykan_full`` trains ``w_b``, ``w_s`` and ``beta``; ``effkan`` trains both
    scales and has no ``beta``; ``cl`` freezes ``w_b`` and ``beta`` and trains
    ``w_s`` only if ``train_ws`` is set.  The ``train_*`` arguments override the
    mode defaults (used by the scale/bias ablation).
    """

    kind = "kan_linear"

    def __init__(self, d_in: int, d_out: int, G: int = 5, k: int = 3, mode: str = "effkan",
                 lo: float = -1.0, hi: float = 1.0, rng: np.random.Generator | None = None,
                 train_ws: bool | None = None, train_wb: bool | None = None, train_beta: bool | None = None,
                 scale_init: str | None = None, coef_std: float | None = None, name: str | None = None):
        super().__init__(name)
        if mode not in MODES:
            raise ValueError(f"unknown KAN mode {mode!r}; expected one of {MODES}")
        if k < 1:
            raise ValueError("KAN layers need spline order k >= 1 for input gradients")
        self.d_in, self.d_out, self.mode = int(d_in), int(d_out), mode
        self.grid = build_grid(lo, hi, G, k)
        rng = rng if rng is not None else nd.make_rng(0)
        nb = self.grid.n_basis
        std = 0.1 / np.sqrt(nb) if coef_std is None else coef_std
        if scale_init is None:
            scale_init = "pykan" if mode == "pykan_full" else "kaiming"
        self.scale_init = scale_init
        self.params["coef"] = rng.normal(0.0, std, size=(self.d_out, self.d_in, nb))
        self.params["w_s"], self.params["w_b"] = _init_scales(scale_init, (self.d_out, self.d_in),
                                                              self._fan_in(), rng)
        has_beta = mode != "effkan" or train_beta
        if has_beta:
            self.params["beta"] = np.zeros(self.d_out)
        defaults = {
            "pykan_full": (True, True, True),
            "effkan": (True, True, False),
            "cl": (False, False, False),
        }[mode]
        ws, wb, beta = defaults
        self.trainable = {
            "coef": True,
            "w_s": ws if train_ws is None else bool(train_ws),
            "w_b": wb if train_wb is None else bool(train_wb),
        }
        if has_beta:
            self.trainable["beta"] = beta if train_beta is None else bool(train_beta)

    def _fan_in(self) -> int:
        return self.d_in

    @property
    def accounting_mode(self) -> str | None:
        t = self.trainable
        flags = (t["w_s"], t["w_b"], t.get("beta", False), "beta" in self.params)
        return {
            (True, True, True, True): "pykan_full",
            (True, True, False, False): "effkan",
            (False, False, False, True): "cl_fixed",
            (True, False, False, True): "cl_ws_trainable",
        }.get(flags)

    def count_spec(self) -> LayerCountSpec | None:
        mode = self.accounting_mode
        if mode is None:
            return None
        return LayerCountSpec("kan_linear", d_in=self.d_in, d_out=self.d_out,
                              G=self.grid.G, k=self.grid.k, mode=mode)

    # core computation on 2-D inputs, shared with the convolutional variant
    def _forward2d(self, x: np.ndarray, need_grad: bool = False):
        p, grid = self.params, self.grid
        n = x.shape[0]
        if need_grad:
            vals, slopes, first = local_basis_with_slopes(x, grid)
        else:
            (vals, first), slopes = local_basis(x, grid), None
        idx = first[..., None] + np.arange(grid.k + 1)
        basis = _dense(vals, idx, grid.n_basis)
        weighted = p["coef"] * p["w_s"][..., None]
        flat_w = weighted.reshape(self.d_out, -1)
        sig = nd.sigmoid(x)
        base = x * sig
        out = nd.matmul(basis.reshape(n, -1), flat_w.T) + nd.matmul(base, p["w_b"].T)
        if "beta" in p:
            out = out + p["beta"]
        return out, (x, basis, base, sig, slopes, idx)

    def _backward2d(self, grad: np.ndarray, cache, need_input_grad: bool):
        x, basis, base, sig, slopes, idx = cache
        p, t = self.params, self.trainable
        n = x.shape[0]
        grads = {}
        if t["coef"] or t["w_s"]:
            g_weighted = nd.matmul(grad.T, basis.reshape(n, -1)).reshape(p["coef"].shape)
            if t["coef"]:
                grads["coef"] = g_weighted * p["w_s"][..., None]
            if t["w_s"]:
                grads["w_s"] = np.sum(g_weighted * p["coef"], axis=-1)
        if t["w_b"]:
            grads["w_b"] = nd.matmul(grad.T, base)
        if t.get("beta", False):
            grads["beta"] = grad.sum(axis=0)
        grad_x = None
        if need_input_grad:
            weighted = (p["coef"] * p["w_s"][..., None]).reshape(self.d_out, -1)
            g_basis = nd.matmul(grad, weighted).reshape(basis.shape)
            # only the k+1 active functions have a nonzero slope
            g_active = np.take_along_axis(g_basis, idx, axis=-1)
            inside = (x >= self.grid.lo) & (x <= self.grid.hi)
            grad_x = np.sum(g_active * slopes, axis=-1) * inside
            grad_x += nd.matmul(grad, p["w_b"]) * (sig * (1.0 + x * (1.0 - sig)))
        return grad_x, grads

    def forward(self, x, tape: GradientTape | None = None, train: bool = False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise nd.ShapeError(f"{self.name}: expected (batch, {self.d_in}) input, got {x.shape}")
        out, cache = self._forward2d(x, need_grad=tape is not None)
        nd.check_finite(out, f"layer {self.name}")
        if tape is not None:
            tape.push(self, cache)
        return out

    def backward(self, grad, tape: GradientTape, need_input_grad: bool = True):
        cache = tape.pop(self)
        return self._backward2d(grad, cache, need_input_grad)


def same_padding(k_s: int) -> tuple[int, int]:
    before = (k_s - 1) // 2
    return before, k_s - 1 - before


def unfold(x: np.ndarray, k_s: int) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*k_s*k_s) windows under same padding, cell order (c, u, v)."""
    n, c, h, w = x.shape
    a, b = same_padding(k_s)
    xp = np.pad(x, ((0, 0), (0, 0), (a, b), (a, b)))
    cols = np.empty((n, h, w, c, k_s, k_s))
    for u in range(k_s):
        for v in range(k_s):
            cols[:, :, :, :, u, v] = xp[:, :, u:u + h, v:v + w].transpose(0, 2, 3, 1)
    return cols.reshape(n * h * w, c * k_s * k_s)


def fold(cols: np.ndarray, shape: tuple[int, int, int, int], k_s: int) -> np.ndarray:
    """Adjoint of :func:`unfold`: scatter-add window gradients back to the input."""
    n, c, h, w = shape
    a, b = same_padding(k_s)
    cols = cols.reshape(n, h, w, c, k_s, k_s)
    xp = np.zeros((n, c, h + a + b, w + a + b))
    for u in range(k_s):
        for v in range(k_s):
            xp[:, :, u:u + h, v:v + w] += cols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return xp[:, :, a:a + h, a:a + w]


class KanConv2d(KanLinear):
    """Same-padded convolution whose kernel cells apply a learnable spline edge to each input entry.

    Parameters are laid out as a KAN linear layer with ``d_in = c_in*k_s*k_s``
    and ``d_out = n_f``; zero padding values also pass through their edge.
    """

    kind = "kan_conv"

    def __init__(self, c_in: int, n_f: int, k_s: int = 3, G: int = 5, k: int = 3, mode: str = "effkan",
                 lo: float = -1.0, hi: float = 1.0, rng=None, train_ws=None, train_wb=None,
                 scale_init: str | None = None, coef_std=None, name=None):
        if mode == "pykan_full":
            raise ValueError("KAN convolutions support effkan or cl modes only")
        self.c_in, self.n_f, self.k_s = int(c_in), int(n_f), int(k_s)
        super().__init__(self.c_in * self.k_s ** 2, self.n_f, G=G, k=k, mode=mode, lo=lo, hi=hi, rng=rng,
                         train_ws=train_ws, train_wb=train_wb, scale_init=scale_init,
                         coef_std=coef_std, name=name)

    def count_spec(self):
        mode = self.accounting_mode
        if mode is None or mode == "pykan_full":
            return None
        return LayerCountSpec("kan_conv", n_f=self.n_f, k_s=self.k_s, c_in=self.c_in,
                              G=self.grid.G, k=self.grid.k, mode=mode)

    def forward(self, x, tape=None, train=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise nd.ShapeError(f"{self.name}: expected (batch, {self.c_in}, H, W) input, got {x.shape}")
        n, _, h, w = x.shape
        out2d, cache = self._forward2d(unfold(x, self.k_s), need_grad=tape is not None)
        out = out2d.reshape(n, h, w, self.n_f).transpose(0, 3, 1, 2)
        nd.check_finite(out, f"layer {self.name}")
        if tape is not None:
            tape.push(self, (x.shape, cache))
        return np.ascontiguousarray(out)

    def backward(self, grad, tape, need_input_grad=True):
        shape, cache = tape.pop(self)
        n, _, h, w = shape
        g2d = grad.transpose(0, 2, 3, 1).reshape(n * h * w, self.n_f)
        gcols, grads = self._backward2d(g2d, cache, need_input_grad)
        gx = fold(gcols, shape, self.k_s) if need_input_grad else None
        return gx, grads
