"""Loading, validation and materialization of the ModelIR JSON format.

A model is a linear chain of quantized layers.  Weights, scales and biases
may be given as explicit integer arrays, a scalar broadcast, or a seeded
splitmix64 generator spec ``{"seed", "lo", "hi"}``, which keeps large
fixtures tiny while staying bit-reproducible.  Structural validation is a
JSON-Schema pass (the schema ships with the package); semantic checks
(shape algebra, chain consistency, operand ranges) happen here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import jsonschema

from .bitserial import Precision
from .util import SplitMix64


class ModelError(Exception):
    pass


class UnsupportedShape(ModelError):
    pass


class UnsupportedOp(ModelError):
    pass


def _load_schema() -> dict:
    with resources.files("mvusim.schema").joinpath("modelir.schema.json").open() as f:
        return json.load(f)


_SCHEMA = _load_schema()


def _prec(d: dict) -> Precision:
    return Precision(d["bits"], d["signed"])


def _materialize(spec, n: int, what: str) -> list[int]:
    if isinstance(spec, int):
        return [spec] * n
    if isinstance(spec, list):
        if len(spec) != n:
            raise ModelError(f"{what}: expected {n} values, got {len(spec)}")
        return list(spec)
    if isinstance(spec, dict):
        return SplitMix64(spec["seed"]).ints(n, spec["lo"], spec["hi"])
    raise ModelError(f"{what}: bad value spec {spec!r}")


@dataclass
class LayerIR:
    name: str
    kind: str
    input_shape: tuple[int, int, int, int]   # NHWC
    output_shape: tuple[int, int, int, int]
    prec_a: Precision
    prec_out: Precision
    quant_msb: int
    kernel: Optional[tuple[int, ...]] = None
    stride: int = 1
    padding: int = 0
    prec_w: Optional[Precision] = None
    weights: Optional[list[int]] = None       # conv: [C_o][C_i][F_H][F_W] row-major
    scale: list[int] = field(default_factory=list)
    bias: list[int] = field(default_factory=list)
    relu: bool = False
    pool: int = 1                              # window == stride; 1 = none

    @property
    def out_channels(self) -> int:
        return self.output_shape[3]

    @property
    def has_matrix(self) -> bool:
        return self.kind in ("conv2d", "gemm", "gemv")

    @property
    def out_bits(self) -> int:
        return self.prec_out.bits

    def weight(self, co: int, ci: int, fh: int, fw: int) -> int:
        _, c_i, k_h, k_w = self.kernel
        return self.weights[((co * c_i + ci) * k_h + fh) * k_w + fw]


@dataclass
class ModelIR:
    name: str
    layers: list[LayerIR]
    clock_hz: float = 250e6

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return self.layers[0].input_shape

    @property
    def output_shape(self) -> tuple[int, int, int, int]:
        return self.layers[-1].output_shape


def conv_output_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _check_layer(lay: LayerIR) -> None:
    n, h, w, c = lay.input_shape
    if n != 1:
        raise UnsupportedShape(f"{lay.name}: batch size must be 1, got {n}")
    if lay.quant_msb < lay.prec_out.bits - 1:
        raise ModelError(f"{lay.name}: quant window narrower than output precision")

    if lay.kind == "conv2d":
        if lay.kernel is None or len(lay.kernel) != 4:
            raise UnsupportedShape(f"{lay.name}: conv kernel must be [C_o,C_i,F_H,F_W]")
        c_o, c_i, k_h, k_w = lay.kernel
        if k_h != k_w:
            raise UnsupportedShape(f"{lay.name}: only square kernels supported")
        if c_i != c:
            raise UnsupportedShape(f"{lay.name}: kernel C_i {c_i} != input C {c}")
        if k_h > h + 2 * lay.padding or k_w > w + 2 * lay.padding:
            raise UnsupportedShape(f"{lay.name}: kernel larger than padded input")
        oh, ow = conv_output_hw(h, w, k_h, lay.stride, lay.padding)
        if lay.pool > 1:
            if oh % lay.pool or ow % lay.pool:
                raise UnsupportedShape(
                    f"{lay.name}: pool window {lay.pool} does not divide {oh}x{ow}")
            oh //= lay.pool
            ow //= lay.pool
        if lay.output_shape != (1, oh, ow, c_o):
            raise UnsupportedShape(
                f"{lay.name}: output shape {lay.output_shape} != (1, {oh}, {ow}, {c_o})")
    elif lay.kind in ("gemm", "gemv"):
        if lay.kernel is None or len(lay.kernel) != 2:
            raise UnsupportedShape(f"{lay.name}: gemm kernel must be [rows, cols]")
        rows, cols = lay.kernel
        if lay.input_shape != (1, 1, 1, cols):
            raise UnsupportedShape(f"{lay.name}: input must be a flat {cols}-vector")
        if lay.output_shape != (1, 1, 1, rows):
            raise UnsupportedShape(f"{lay.name}: output must be a flat {rows}-vector")
        if lay.pool > 1:
            raise UnsupportedShape(f"{lay.name}: pooling undefined for {lay.kind}")
    elif lay.kind == "maxpool":
        if (h % 2) or (w % 2):
            raise UnsupportedShape(f"{lay.name}: maxpool needs even spatial dims")
        if lay.output_shape != (1, h // 2, w // 2, c):
            raise UnsupportedShape(f"{lay.name}: bad maxpool output shape")
        if lay.quant_msb != lay.prec_out.bits - 1:
            raise ModelError(f"{lay.name}: maxpool quant window must pass through")
    elif lay.kind == "relu":
        if lay.output_shape != lay.input_shape:
            raise UnsupportedShape(f"{lay.name}: relu must preserve shape")
        if lay.quant_msb != lay.prec_out.bits - 1:
            raise ModelError(f"{lay.name}: relu quant window must pass through")
    else:
        raise UnsupportedOp(lay.kind)


def _layer_from_dict(d: dict) -> LayerIR:
    kind = d["kind"]
    kernel = tuple(d["kernel"]) if d.get("kernel") is not None else None
    lay = LayerIR(
        name=d["name"], kind=kind,
        input_shape=tuple(d["input_shape"]),
        output_shape=tuple(d["output_shape"]),
        prec_a=_prec(d["prec_a"]),
        prec_out=_prec(d["prec_out"]),
        quant_msb=d["quant_msb"],
        kernel=kernel,
        stride=d.get("stride", 1),
        padding=d.get("padding", 0),
        prec_w=_prec(d["prec_w"]) if "prec_w" in d else None,
        relu=d.get("relu", False),
        pool=d["pool"]["window"] if "pool" in d else 1,
    )
    if lay.has_matrix:
        if lay.prec_w is None:
            raise ModelError(f"{lay.name}: {kind} requires prec_w")
        if kind == "conv2d":
            c_o, c_i, k_h, k_w = lay.kernel
            n_w = c_o * c_i * k_h * k_w
        else:
            n_w = lay.kernel[0] * lay.kernel[1]
        lay.weights = _materialize(d.get("weights", 0), n_w, f"{lay.name}.weights")
        import numpy as _np
        warr = _np.asarray(lay.weights, dtype=_np.int64)
        if len(warr) and (warr.min() < lay.prec_w.lo or warr.max() > lay.prec_w.hi):
            v = warr[(warr < lay.prec_w.lo) | (warr > lay.prec_w.hi)][0]
            raise ModelError(
                f"{lay.name}: weight {v} outside {lay.prec_w} range")
        n_out = lay.out_channels
        lay.scale = _materialize(d.get("scale", 1), n_out, f"{lay.name}.scale")
        lay.bias = _materialize(d.get("bias", 0), n_out, f"{lay.name}.bias")
        for s in lay.scale:
            if not 0 <= s < (1 << 16):
                raise ModelError(f"{lay.name}: scale {s} outside 16-bit unsigned range")
        for b in lay.bias:
            if not -(1 << 31) <= b < (1 << 31):
                raise ModelError(f"{lay.name}: bias {b} outside 32-bit signed range")
    return lay


def model_from_dict(doc: dict) -> ModelIR:
    try:
        jsonschema.validate(doc, _SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path)
        if "shape" in path:
            raise UnsupportedShape(f"{path}: {e.message}") from None
        raise ModelError(f"{path}: {e.message}") from None
    layers = [_layer_from_dict(d) for d in doc["layers"]]
    for lay in layers:
        _check_layer(lay)
    for prev, nxt in zip(layers, layers[1:]):
        if prev.output_shape != nxt.input_shape:
            raise UnsupportedShape(
                f"{nxt.name}: input shape {nxt.input_shape} != previous output "
                f"{prev.output_shape}")
        if prev.prec_out != nxt.prec_a:
            raise ModelError(
                f"{nxt.name}: input precision {nxt.prec_a} != previous output "
                f"{prev.prec_out}")
    return ModelIR(name=doc["name"], layers=layers,
                   clock_hz=doc.get("clock_hz", 250e6))


def load_model(path: str) -> ModelIR:
    with open(path) as f:
        return model_from_dict(json.load(f))


def dump_model(doc: dict, path: str) -> None:
    """Write a model document with canonical formatting (validates first)."""
    jsonschema.validate(doc, _SCHEMA)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
