"""Independent fixed-point reference semantics for ModelIR models.

This module is the second route of every equivalence check, so it must not
share arithmetic with the accelerator model: it imports only the IR layer
and computes each layer with straightforward integer array operations
(direct convolution by kernel position, plain matrix products, window max,
arithmetic shift-and-mask quantization).  All values stay exact in int64,
which comfortably holds the 43-bit worst case ahead of quantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ir import LayerIR, ModelIR
from .bitserial import Precision


class ShapeMismatch(Exception):
    pass


@dataclass
class OracleTensor:
    shape: tuple[int, int, int, int]  # NHWC
    values: np.ndarray                # int64, matching shape
    precision: Precision

    @classmethod
    def from_flat(cls, shape, flat, precision) -> "OracleTensor":
        arr = np.asarray(flat, dtype=np.int64).reshape(shape)
        return cls(tuple(shape), arr, precision)

    def flat(self) -> list[int]:
        return [int(v) for v in self.values.reshape(-1)]


def quantize_window(arr: np.ndarray, msb: int, out_bits: int,
                    signed_out: bool) -> np.ndarray:
    """Arithmetic shift-and-truncate: bits [msb .. msb-out_bits+1]."""
    shift = msb - out_bits + 1
    window = (arr >> shift) & ((1 << out_bits) - 1)
    if signed_out:
        sign = 1 << (out_bits - 1)
        window = window - ((window & sign) << 1)
    return window


def _conv2d(lay: LayerIR, x: np.ndarray) -> np.ndarray:
    _, h, w, c_in = lay.input_shape
    c_o, c_i, k, _ = lay.kernel
    s, p = lay.stride, lay.padding
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    xp = np.zeros((h + 2 * p, w + 2 * p, c_in), dtype=np.int64)
    xp[p:p + h, p:p + w, :] = x[0]
    wk = np.asarray(lay.weights, dtype=np.int64).reshape(c_o, c_i, k, k)
    acc = np.zeros((oh, ow, c_o), dtype=np.int64)
    for fh in range(k):
        for fw in range(k):
            window = xp[fh:fh + s * oh:s, fw:fw + s * ow:s, :]
            acc += window @ wk[:, :, fh, fw].T
    return acc[np.newaxis, ...]


def _gemv(lay: LayerIR, x: np.ndarray) -> np.ndarray:
    rows, cols = lay.kernel
    wk = np.asarray(lay.weights, dtype=np.int64).reshape(rows, cols)
    y = wk @ x.reshape(cols)
    return y.reshape(1, 1, 1, rows)


def _maxpool2x2(x: np.ndarray) -> np.ndarray:
    _, h, w, c = x.shape
    v = x.reshape(h // 2, 2, w // 2, 2, c)
    return v.max(axis=(1, 3))[np.newaxis, ...]


def run_layer(lay: LayerIR, x: np.ndarray) -> np.ndarray:
    """One layer's pipeline: matrix op, scale+bias, pool/relu, quantize."""
    if lay.kind == "conv2d":
        acc = _conv2d(lay, x)
    elif lay.kind in ("gemm", "gemv"):
        acc = _gemv(lay, x)
    elif lay.kind in ("maxpool", "relu"):
        acc = x.astype(np.int64)
    else:
        raise ShapeMismatch(f"unsupported layer kind {lay.kind}")

    if lay.has_matrix:
        scale = np.asarray(lay.scale, dtype=np.int64)
        bias = np.asarray(lay.bias, dtype=np.int64)
        acc = acc * scale + bias

    if lay.relu:
        acc = np.maximum(acc, 0)
    if lay.kind == "maxpool" or lay.pool > 1:
        acc = _maxpool2x2(acc)

    return quantize_window(acc, lay.quant_msb, lay.prec_out.bits,
                           lay.prec_out.signed)


def oracle_infer(model: ModelIR, inp: OracleTensor) -> OracleTensor:
    """Run the whole model; exact integers end to end."""
    if tuple(inp.shape) != tuple(model.input_shape):
        raise ShapeMismatch(
            f"input shape {inp.shape} != model input {model.input_shape}")
    if inp.precision != model.layers[0].prec_a:
        raise ShapeMismatch(
            f"input precision {inp.precision} != layer precision "
            f"{model.layers[0].prec_a}")
    x = inp.values
    for lay in model.layers:
        x = run_layer(lay, x)
    last = model.layers[-1]
    return OracleTensor(tuple(last.output_shape), x, last.prec_out)
