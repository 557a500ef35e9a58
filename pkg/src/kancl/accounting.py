"""Exact trainable-parameter counts for the dense, KAN and convolutional families.

Per-edge parameter counts for KAN layers, with ``n = G + k`` spline
coefficients per edge:

=================  ===============  =========================================
mode               per edge         extra
=================  ===============  =========================================
pykan_full         n + 6            ``d_out`` biases; 4 of the 6 belong to the
                                    symbolic front and are never instantiated
effkan             n + 2            none (no bias)
cl_fixed           n                scales and bias frozen
cl_ws_trainable    n + 1            only the spline scale is trained
=================  ===============  =========================================

Convolution counts come in two flavours.  ``nominal`` uses per-filter
formulas that ignore input channels; ``channel_aware`` is what
an instantiated layer actually holds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

KINDS = ("dense", "kan_linear", "conv", "kan_conv")
KAN_MODES = ("pykan_full", "effkan", "cl_fixed", "cl_ws_trainable")
_EDGE_EXTRA = {"pykan_full": 6, "effkan": 2, "cl_fixed": 0, "cl_ws_trainable": 1}
SYMBOLIC_PER_EDGE = 4


class AccountingError(ValueError):
    pass


@dataclass(frozen=True)
class LayerCountSpec:
    kind: str
    d_in: int = 0
    d_out: int = 0
    n_f: int = 0
    k_s: int = 0
    c_in: int = 1
    G: int = 0
    k: int = 0
    mode: str | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise AccountingError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("dense", "kan_linear"):
            if self.d_in < 1 or self.d_out < 1:
                raise AccountingError(f"{self.kind}: widths must be positive, got {self.d_in}x{self.d_out}")
        else:
            if self.n_f < 1 or self.k_s < 1 or self.c_in < 1:
                raise AccountingError(f"{self.kind}: n_f, k_s, c_in must be positive")
        if self.kind in ("dense", "conv"):
            if self.mode is not None:
                raise AccountingError(f"{self.kind} layers take no KAN mode, got {self.mode!r}")
            return
        if self.G < 1 or self.k < 0:
            raise AccountingError(f"{self.kind}: need G >= 1 and k >= 0, got G={self.G}, k={self.k}")
        if self.mode not in KAN_MODES:
            raise AccountingError(f"{self.kind}: unknown mode {self.mode!r}")
        if self.kind == "kan_conv" and self.mode == "pykan_full":
            raise AccountingError("kan_conv has no pykan_full variant (no bias or symbolic front)")


@dataclass(frozen=True)
class LayerCount:
    spec: LayerCountSpec
    nominal: int
    channel_aware: int

    def to_dict(self) -> dict:
        d = asdict(self.spec)
        d.update(nominal=self.nominal, channel_aware=self.channel_aware)
        return d


def count_layer_detail(spec: LayerCountSpec) -> LayerCount:
    spec.validate()
    if spec.kind == "dense":
        n = spec.d_in * spec.d_out + spec.d_out
        return LayerCount(spec, n, n)
    if spec.kind == "conv":
        nominal = spec.n_f * (spec.k_s ** 2 + 1)
        true = spec.n_f * spec.c_in * spec.k_s ** 2 + spec.n_f
        return LayerCount(spec, nominal, true)
    per_edge = spec.G + spec.k + _EDGE_EXTRA[spec.mode]
    if spec.kind == "kan_linear":
        n = spec.d_in * spec.d_out * per_edge
        if spec.mode == "pykan_full":
            n += spec.d_out
        return LayerCount(spec, n, n)
    nominal = spec.n_f * spec.k_s ** 2 * per_edge
    return LayerCount(spec, nominal, nominal * spec.c_in)


def count_layer(spec: LayerCountSpec, basis: str = "nominal") -> int:
    detail = count_layer_detail(spec)
    if basis == "nominal":
        return detail.nominal
    if basis == "channel_aware":
        return detail.channel_aware
    raise AccountingError(f"unknown counting basis {basis!r}")


@dataclass(frozen=True)
class NetworkCount:
    layers: tuple[LayerCount, ...]

    @property
    def total(self) -> int:
        return sum(c.nominal for c in self.layers)

    @property
    def total_channel_aware(self) -> int:
        return sum(c.channel_aware for c in self.layers)

    def to_dict(self) -> dict:
        return {
            "layers": [c.to_dict() for c in self.layers],
            "total": self.total,
            "total_channel_aware": self.total_channel_aware,
        }


def count_network(specs) -> NetworkCount:
    specs = list(specs)
    if not specs:
        raise AccountingError("empty network")
    return NetworkCount(tuple(count_layer_detail(s) for s in specs))


def mlp_specs(widths) -> list[LayerCountSpec]:
    return [LayerCountSpec("dense", d_in=a, d_out=b) for a, b in zip(widths, widths[1:])]


def kan_specs(widths, G: int, k: int, mode: str) -> list[LayerCountSpec]:
    return [LayerCountSpec("kan_linear", d_in=a, d_out=b, G=G, k=k, mode=mode) for a, b in zip(widths, widths[1:])]
