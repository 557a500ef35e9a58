"""Declarative architectures, their instantiation, and parameter checkpoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ndtensor as nd
from .accounting import SYMBOLIC_PER_EDGE, count_network
from .layers import (Activation, BatchNorm, Conv2d, Dense, Flatten, GradientTape, KanConv2d, KanLinear,
                     MaxPool2d)

MODELS = ("mlp", "kan", "kanv", "convnet", "convkan", "kkan")
CONV_MODELS = ("kanv", "convnet", "convkan", "kkan")
_DEFAULT_HIDDEN = {"convnet": 161, "kanv": 161, "convkan": 20, "kkan": 31}
CHECKPOINT_FORMAT = "kancl-checkpoint"
CHECKPOINT_VERSION = 1


class SpecError(ValueError):
    pass


@dataclass
class NetworkSpec:
    model: str = "kan"
    widths: list[int] = field(default_factory=lambda: [784, 128, 10])
    G: int = 5
    k: int = 3
    kan_mode: str = "effkan"
    train_ws: bool | None = None
    train_wb: bool | None = None
    train_beta: bool | None = None
    lo: float = -1.0
    hi: float = 1.0
    scale_init: str | None = None
    batch_norm: bool = True
    filters: int = 5
    kernel: int = 3
    hidden: int | None = None
    image_side: int = 28
    n_classes: int = 10

    def validate(self) -> None:
        if self.model not in MODELS:
            raise SpecError(f"model: unknown model {self.model!r}; expected one of {MODELS}")
        if self.model in ("mlp", "kan"):
            if len(self.widths) < 2 or any(int(w) < 1 for w in self.widths):
                raise SpecError(f"widths: need at least two positive widths, got {self.widths}")
        if self.G < 1:
            raise SpecError(f"G: grid size must be >= 1, got {self.G}")
        if self.k < 1:
            raise SpecError(f"k: spline order must be >= 1, got {self.k}")
        if not self.lo < self.hi:
            raise SpecError(f"lo/hi: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.kan_mode not in ("pykan_full", "effkan", "cl"):
            raise SpecError(f"kan_mode: unknown mode {self.kan_mode!r}")
        if self.model in ("kanv", "kkan") and self.kan_mode == "pykan_full":
            raise SpecError("kan_mode: KAN convolutions do not support pykan_full")
        if self.model in CONV_MODELS:
            if self.filters < 1 or self.kernel < 1:
                raise SpecError("filters/kernel: must be positive")
            if self.image_side % 2:
                raise SpecError("image_side: must be even for 2x pooling")
        if self.scale_init not in (None, "unit", "fan_in", "kaiming", "pykan"):
            raise SpecError(f"scale_init: unknown value {self.scale_init!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown network fields: {sorted(unknown)}")
        spec = cls(**d)
        spec.widths = [int(w) for w in spec.widths]
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


class Network:
    """A stack of layers with a shared forward/backward driver."""

    def __init__(self, spec: NetworkSpec, layers: list, input_shape: tuple[int, ...] | None = None):
        self.spec = spec
        self.layers = layers
        self.input_shape = input_shape

    def forward(self, x: np.ndarray, tape: GradientTape | None = None, train: bool = False) -> np.ndarray:
        if self.input_shape is not None:
            x = x.reshape((x.shape[0],) + self.input_shape)
        for layer in self.layers:
            x = layer.forward(x, tape=tape, train=train)
        return x

    def backward(self, grad: np.ndarray, tape: GradientTape) -> dict[str, np.ndarray]:
        """Gradients keyed like :meth:`named_params`, trainable entries only."""
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            grad, layer_grads = layer.backward(grad, tape, need_input_grad=i > 0)
            for key, g in layer_grads.items():
                grads[f"{i}.{key}"] = g
        if len(tape):
            raise RuntimeError("tape not fully consumed by backward pass")
        return grads

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{key}": arr for i, layer in enumerate(self.layers) for key, arr in layer.params.items()}

    def trainable_keys(self) -> list[str]:
        return [f"{i}.{key}" for i, layer in enumerate(self.layers) for key in layer.trainable_names()]

    def set_param(self, key: str, value: np.ndarray) -> None:
        i, name = key.split(".", 1)
        self.layers[int(i)].params[name] = value

    def state(self) -> dict[str, np.ndarray]:
        return {f"{i}.{key}": arr for i, layer in enumerate(self.layers) for key, arr in layer.state().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        per_layer: dict[int, dict] = {}
        for key, value in arrays.items():
            i, name = key.split(".", 1)
            per_layer.setdefault(int(i), {})[name] = value
        for i, layer_arrays in per_layer.items():
            self.layers[i].load_state(layer_arrays)

    def n_trainable(self) -> int:
        return sum(layer.n_trainable() for layer in self.layers)

    def count_specs(self) -> list:
        return [s for s in (layer.count_spec() for layer in self.layers) if s is not None]

    def parameter_report(self) -> dict:
        """Accounting totals next to what the instantiated layers actually hold."""
        report = count_network(self.count_specs()).to_dict() if self.count_specs() else {"layers": []}
        report["instantiated"] = self.n_trainable()
        symbolic = sum(SYMBOLIC_PER_EDGE * s.d_in * s.d_out for s in self.count_specs()
                       if s.kind == "kan_linear" and s.mode == "pykan_full")
        report["symbolic_front_not_instantiated"] = symbolic
        return report


def _kan(spec, d_in, d_out, rng, name):
    return KanLinear(d_in, d_out, G=spec.G, k=spec.k, mode=spec.kan_mode, lo=spec.lo, hi=spec.hi, rng=rng,
                     train_ws=spec.train_ws, train_wb=spec.train_wb, train_beta=spec.train_beta,
                     scale_init=spec.scale_init, name=name)


def _kan_conv(spec, c_in, rng, name):
    return KanConv2d(c_in, spec.filters, spec.kernel, G=spec.G, k=spec.k, mode=spec.kan_mode, lo=spec.lo,
                     hi=spec.hi, rng=rng, train_ws=spec.train_ws, train_wb=spec.train_wb,
                     scale_init=spec.scale_init, name=name)


def _kan_stack(spec, widths, rng, prefix):
    layers = []
    for j, (a, b) in enumerate(zip(widths, widths[1:])):
        if j > 0 or prefix != "kan":
            layers.append(Activation("tanh", name=f"{prefix}_squash{j}"))
        layers.append(_kan(spec, a, b, rng, f"{prefix}{j}"))
    return layers


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    spec.validate()
    rng = nd.make_rng(seed)
    m = spec.model
    if m == "mlp":
        w = spec.widths
        layers = [Dense(a, b, activation="relu" if j < len(w) - 2 else "none", rng=rng, name=f"dense{j}")
                  for j, (a, b) in enumerate(zip(w, w[1:]))]
        return Network(spec, layers)
    if m == "kan":
        return Network(spec, _kan_stack(spec, spec.widths, rng, "kan"))

    f, side = spec.filters, spec.image_side
    flat = f * (side // 2) ** 2
    hidden = spec.hidden or _DEFAULT_HIDDEN[m]
    bn = (lambda name: [BatchNorm(f, name=name)]) if spec.batch_norm else (lambda name: [])
    layers: list = []
    if m in ("convnet", "convkan"):
        layers += [Conv2d(1, f, spec.kernel, rng=rng, name="conv0"), *bn("bn0"), Activation("relu", name="relu0"),
                   Conv2d(f, f, spec.kernel, rng=rng, name="conv1"), *bn("bn1"), Activation("relu", name="relu1")]
    else:
        layers += [_kan_conv(spec, 1, rng, "kconv0"), *bn("bn0"), Activation("tanh", name="squash_conv1"),
                   _kan_conv(spec, f, rng, "kconv1"), *bn("bn1")]
    layers += [MaxPool2d(2, name="pool"), Flatten(name="flatten")]
    if m in ("convnet", "kanv"):
        layers += [Dense(flat, hidden, activation="relu", rng=rng, name="fc0"),
                   Dense(hidden, spec.n_classes, rng=rng, name="fc1")]
    else:
        layers += _kan_stack(spec, [flat, hidden, spec.n_classes], rng, "head")
    return Network(spec, layers, input_shape=(1, side, side))


def save_checkpoint(net: Network, path) -> Path:
    """Write spec and every array, in declaration order, to an uncompressed ``.npz``."""
    path = Path(path)
    arrays = net.state()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": net.spec.to_dict(),
        "arrays": list(arrays),
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path) -> Network:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {name: data[name] for name in meta["arrays"]}
    net = build_network(NetworkSpec.from_dict(meta["spec"]))
    net.load_state(arrays)
    return net
