"""Dense, convolution, pooling, normalisation and activation layers."""
from __future__ import annotations

import numpy as np

from .. import ndtensor as nd
from ..accounting import LayerCountSpec
from .base import Layer
from .kan import fold, unfold

_ACT = {
    "relu": (nd.relu, lambda z, y: (z > 0).astype(np.float64)),
    "silu": (nd.silu, lambda z, y: nd.silu_grad(z)),
    "tanh": (np.tanh, lambda z, y: 1.0 - y * y),
}


def _kaiming_uniform(rng, shape, fan_in, a=np.sqrt(5.0)):
    # leaky-relu gain with slope a; a=sqrt(5) gives the common 1/sqrt(fan_in) bound
    bound = np.sqrt(6.0 / ((1.0 + a * a) * fan_in))
    return rng.uniform(-bound, bound, size=shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, d_in: int, d_out: int, activation: str = "none", rng=None, name=None):
        super().__init__(name)
        if activation not in ("none",) + tuple(_ACT):
            raise ValueError(f"unknown activation {activation!r}")
        self.d_in, self.d_out, self.activation = int(d_in), int(d_out), activation
        rng = rng if rng is not None else nd.make_rng(0)
        self.params["W"] = _kaiming_uniform(rng, (self.d_out, self.d_in), self.d_in)
        self.params["b"] = np.zeros(self.d_out)
        self.trainable = {"W": True, "b": True}

    def count_spec(self):
        return LayerCountSpec("dense", d_in=self.d_in, d_out=self.d_out)

    def forward(self, x, tape=None, train=False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise nd.ShapeError(f"{self.name}: expected (batch, {self.d_in}) input, got {x.shape}")
        z = nd.matmul(x, self.params["W"].T) + self.params["b"]
        y = z if self.activation == "none" else _ACT[self.activation][0](z)
        nd.check_finite(y, f"layer {self.name}")
        if tape is not None:
            tape.push(self, (x, z, y))
        return y

    def backward(self, grad, tape, need_input_grad=True):
        x, z, y = tape.pop(self)
        if self.activation != "none":
            grad = grad * _ACT[self.activation][1](z, y)
        grads = {"W": nd.matmul(grad.T, x), "b": grad.sum(axis=0)}
        gx = nd.matmul(grad, self.params["W"]) if need_input_grad else None
        return gx, grads


class Conv2d(Layer):
    """Same-padded, stride-1 convolution over all input channels."""

    kind = "conv"

    def __init__(self, c_in: int, n_f: int, k_s: int = 3, rng=None, name=None):
        super().__init__(name)
        self.c_in, self.n_f, self.k_s = int(c_in), int(n_f), int(k_s)
        rng = rng if rng is not None else nd.make_rng(0)
        fan_in = self.c_in * self.k_s ** 2
        self.params["W"] = _kaiming_uniform(rng, (self.n_f, self.c_in, self.k_s, self.k_s), fan_in)
        self.params["b"] = np.zeros(self.n_f)
        self.trainable = {"W": True, "b": True}

    def count_spec(self):
        return LayerCountSpec("conv", n_f=self.n_f, k_s=self.k_s, c_in=self.c_in)

    def forward(self, x, tape=None, train=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise nd.ShapeError(f"{self.name}: expected (batch, {self.c_in}, H, W) input, got {x.shape}")
        n, _, h, w = x.shape
        cols = unfold(x, self.k_s)
        out = nd.matmul(cols, self.params["W"].reshape(self.n_f, -1).T) + self.params["b"]
        out = np.ascontiguousarray(out.reshape(n, h, w, self.n_f).transpose(0, 3, 1, 2))
        if tape is not None:
            tape.push(self, (x.shape, cols))
        return out

    def backward(self, grad, tape, need_input_grad=True):
        shape, cols = tape.pop(self)
        n, _, h, w = shape
        g2d = grad.transpose(0, 2, 3, 1).reshape(n * h * w, self.n_f)
        grads = {
            "W": nd.matmul(g2d.T, cols).reshape(self.params["W"].shape),
            "b": g2d.sum(axis=0),
        }
        gx = None
        if need_input_grad:
            gx = fold(nd.matmul(g2d, self.params["W"].reshape(self.n_f, -1)), shape, self.k_s)
        return gx, grads


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, factor: int = 2, name=None):
        super().__init__(name)
        self.factor = int(factor)

    def forward(self, x, tape=None, train=False):
        n, c, h, w = x.shape
        p = self.factor
        if h % p or w % p:
            raise nd.ShapeError(f"{self.name}: pool factor {p} does not divide {h}x{w}")
        win = x.reshape(n, c, h // p, p, w // p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // p, w // p, p * p)
        # argmax picks the first maximum in row-major window order
        arg = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        if tape is not None:
            tape.push(self, (x.shape, arg))
        return out

    def backward(self, grad, tape, need_input_grad=True):
        (n, c, h, w), arg = tape.pop(self)
        p = self.factor
        win = np.zeros((n, c, h // p, w // p, p * p))
        np.put_along_axis(win, arg[..., None], grad[..., None], axis=-1)
        gx = win.reshape(n, c, h // p, w // p, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return gx, {}


class BatchNorm(Layer):
    """Per-channel normalisation for (N, C) or (N, C, H, W) inputs."""

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name=None):
        super().__init__(name)
        self.channels, self.momentum, self.eps = int(channels), float(momentum), float(eps)
        self.params["gamma"] = np.ones(self.channels)
        self.params["shift"] = np.zeros(self.channels)
        self.trainable = {"gamma": True, "shift": True}
        self.buffers = {"running_mean": np.zeros(self.channels), "running_var": np.ones(self.channels)}

    def _axes(self, x):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise nd.ShapeError(f"{self.name}: expected {self.channels} channels, got {x.shape}")
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, tape=None, train=False):
        axes = self._axes(x)
        if train:
            if x.shape[0] < 2:
                raise ValueError(f"{self.name}: batch norm needs batch size >= 2 in training mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.channels
            mom = self.momentum
            self.buffers["running_mean"] = (1 - mom) * self.buffers["running_mean"] + mom * mean
            self.buffers["running_var"] = (1 - mom) * self.buffers["running_var"] + mom * var * m / (m - 1)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        out = xhat * self._bcast(self.params["gamma"], x) + self._bcast(self.params["shift"], x)
        if tape is not None:
            if not train:
                raise ValueError(f"{self.name}: recording a tape requires training mode")
            tape.push(self, (xhat, inv))
        return out

    def backward(self, grad, tape, need_input_grad=True):
        xhat, inv = tape.pop(self)
        axes = self._axes(grad)
        grads = {"gamma": np.sum(grad * xhat, axis=axes), "shift": grad.sum(axis=axes)}
        gx = None
        if need_input_grad:
            m = grad.size // self.channels
            g = grad * self._bcast(self.params["gamma"], grad)
            gx = (self._bcast(inv, grad) / m) * (
                m * g - self._bcast(g.sum(axis=axes), grad) - xhat * self._bcast(np.sum(g * xhat, axis=axes), grad)
            )
        return gx, grads

    def state(self):
        return {**self.params, **self.buffers}

    def load_state(self, arrays):
        arrays = dict(arrays)
        for key in list(arrays):
            if key in self.buffers:
                self.buffers[key] = np.array(arrays.pop(key), dtype=np.float64)
        super().load_state(arrays)


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn: str, name=None):
        super().__init__(name or fn)
        if fn not in _ACT:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, x, tape=None, train=False):
        y = _ACT[self.fn][0](x)
        if tape is not None:
            tape.push(self, (x, y))
        return y

    def backward(self, grad, tape, need_input_grad=True):
        x, y = tape.pop(self)
        return grad * _ACT[self.fn][1](x, y), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, tape=None, train=False):
        if tape is not None:
            tape.push(self, x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, tape, need_input_grad=True):
        return grad.reshape(tape.pop(self)), {}
