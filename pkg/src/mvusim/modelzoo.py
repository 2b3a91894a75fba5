"""Synthetic quantized models for tests, fixtures and demos.

Builders emit ModelIR documents with seeded-generator weights and a
quantizer window planned from exact per-channel interval bounds, so every
intermediate value provably fits the scaler's 27-bit input and the
quantizer's 32-bit input, and quantized outputs land in the next layer's
input range.
"""

from __future__ import annotations

from .bitserial import Precision
from .ir import model_from_dict
from .util import SplitMix64


def _pd(p: Precision) -> dict:
    return {"bits": p.bits, "signed": p.signed}


def weight_prec(bits: int) -> Precision:
    return Precision(bits, signed=bits >= 2)


def act_prec(bits: int) -> Precision:
    return Precision(bits, signed=False)


def _plan_quant(weights, n_out, n_in_terms, prec_a, scale, bias, relu,
                out_bits, name):
    """Choose the MSB window position.

    Hard limits (scaler 27-bit input, quantizer 32-bit input) are checked
    against exact per-channel interval bounds.  The window itself is aimed
    at a one-sigma estimate of the accumulator distribution so typical
    outputs exercise the full quantized range; rarer values truncate above
    the window, identically in the simulator and the oracle.
    """
    import numpy as np
    alo, ahi = prec_a.lo, prec_a.hi
    mean_a = (alo + ahi) / 2
    var_a = ((ahi - alo + 1) ** 2 - 1) / 12
    w = np.asarray(weights, dtype=np.int64).reshape(n_out, n_in_terms)
    s = np.asarray(scale, dtype=np.int64)
    b = np.asarray(bias, dtype=np.int64)
    lo = np.minimum(w * alo, w * ahi).sum(axis=1)
    hi = np.maximum(w * alo, w * ahi).sum(axis=1)
    if max(abs(int(lo.min())), abs(int(hi.max()))) >= (1 << 26):
        raise ValueError(f"{name}: raw accumulator bound exceeds 27-bit "
                         f"range; shrink weights or scale")
    glo = min(0, int((lo * s + b).min()))
    ghi = max(0, int((hi * s + b).max()))
    center = w.sum(axis=1) * mean_a
    sigma = np.sqrt((w * w).sum(axis=1) * var_a)
    t_hi = max(0, int((((center + sigma) * s).astype(np.int64) + b).max()))
    t_lo = min(0, int((((center - sigma) * s).astype(np.int64) + b).min()))
    if max(abs(glo), abs(ghi)) >= (1 << 31):
        raise ValueError(f"{name}: scaled bound exceeds 32-bit range")
    if relu:
        width = max(1, max(1, t_hi).bit_length())
        msb = max(out_bits - 1, width - 1)
    else:
        width = max(abs(t_lo).bit_length(), max(1, t_hi).bit_length()) + 1
        msb = max(out_bits - 1, width - 1)
    if msb > 31:
        raise ValueError(f"{name}: quant window position {msb} out of range")
    return msb


def _gen(seed, lo, hi):
    return {"seed": seed, "lo": lo, "hi": hi}


def _centering_bias(weights, n_out, n_terms, prec_a, scale, seed,
                    jitter=(-4, 4)) -> list[int]:
    """Bias that cancels each channel's mean accumulator, plus jitter.

    Keeps post-ReLU outputs informative instead of clamping the whole
    distribution to zero when weights have a negative mean.
    """
    rng = SplitMix64(seed)
    twice_mean_a = prec_a.lo + prec_a.hi
    out = []
    for o in range(n_out):
        center2 = sum(weights[o * n_terms + t] for t in range(n_terms)) \
            * twice_mean_a
        out.append(-(center2 * scale[o]) // 2 + rng.randint(*jitter))
    return out


def conv_layer(name: str, in_shape, c_out: int, k: int, stride: int, pad: int,
               a_bits: int, w_bits: int, out_bits: int, seed: int,
               relu: bool = True, pool: bool = False, w_range=None,
               scale_range=(1, 3), bias_range=(-8, 8)) -> dict:
    _, h, w, c_in = in_shape
    pa, pw = act_prec(a_bits), weight_prec(w_bits)
    wlo, whi = w_range if w_range else (pw.lo, pw.hi)
    n_w = c_out * c_in * k * k
    weights = SplitMix64(seed).ints(n_w, wlo, whi)
    scale = SplitMix64(seed + 1).ints(c_out, *scale_range)
    bias = _centering_bias(weights, c_out, c_in * k * k, pa, scale, seed + 2,
                           jitter=bias_range)
    msb = _plan_quant(weights, c_out, c_in * k * k, pa, scale, bias, relu,
                      out_bits, name)
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if pool:
        oh //= 2
        ow //= 2
    out_prec = Precision(out_bits, signed=not relu)
    lay = {
        "name": name, "kind": "conv2d",
        "input_shape": list(in_shape), "output_shape": [1, oh, ow, c_out],
        "kernel": [c_out, c_in, k, k], "stride": stride, "padding": pad,
        "prec_a": _pd(pa), "prec_w": _pd(pw), "prec_out": _pd(out_prec),
        "weights": _gen(seed, wlo, whi), "scale": _gen(seed + 1, *scale_range),
        "bias": bias,
        "quant_msb": msb, "relu": relu,
    }
    if pool:
        lay["pool"] = {"window": 2, "stride": 2}
    return lay


def gemv_layer(name: str, in_shape, rows: int, a_bits: int, w_bits: int,
               out_bits: int, seed: int, relu: bool = True, w_range=None,
               scale_range=(1, 3), bias_range=(-8, 8)) -> dict:
    cols = in_shape[3]
    pa, pw = act_prec(a_bits), weight_prec(w_bits)
    wlo, whi = w_range if w_range else (pw.lo, pw.hi)
    weights = SplitMix64(seed).ints(rows * cols, wlo, whi)
    scale = SplitMix64(seed + 1).ints(rows, *scale_range)
    bias = _centering_bias(weights, rows, cols, pa, scale, seed + 2,
                           jitter=bias_range)
    msb = _plan_quant(weights, rows, cols, pa, scale, bias, relu,
                      out_bits, name)
    out_prec = Precision(out_bits, signed=not relu)
    return {
        "name": name, "kind": "gemv",
        "input_shape": list(in_shape), "output_shape": [1, 1, 1, rows],
        "kernel": [rows, cols],
        "prec_a": _pd(pa), "prec_w": _pd(pw), "prec_out": _pd(out_prec),
        "weights": _gen(seed, wlo, whi), "scale": _gen(seed + 1, *scale_range),
        "bias": bias,
        "quant_msb": msb, "relu": relu,
    }


def relu_layer(name: str, in_shape, bits: int) -> dict:
    p = act_prec(bits)
    return {
        "name": name, "kind": "relu",
        "input_shape": list(in_shape), "output_shape": list(in_shape),
        "prec_a": _pd(p), "prec_out": _pd(p),
        "quant_msb": bits - 1, "relu": True,
    }


def maxpool_layer(name: str, in_shape, bits: int) -> dict:
    _, h, w, c = in_shape
    p = act_prec(bits)
    return {
        "name": name, "kind": "maxpool",
        "input_shape": list(in_shape), "output_shape": [1, h // 2, w // 2, c],
        "prec_a": _pd(p), "prec_out": _pd(p),
        "quant_msb": bits - 1, "relu": False,
    }


def model_doc(name: str, layers: list[dict], clock_hz: float = 250e6) -> dict:
    doc = {"version": 1, "name": name, "clock_hz": clock_hz, "layers": layers}
    model_from_dict(doc)  # validate before handing out
    return doc


# ---------------------------------------------------------------------------
# The named models used by the verification matrix and fixtures
# ---------------------------------------------------------------------------

def gemv64(a_bits=2, w_bits=2, seed=101) -> dict:
    lay = gemv_layer("fc0", [1, 1, 1, 64], 64, a_bits, w_bits, a_bits, seed)
    return model_doc(f"gemv64_w{w_bits}a{a_bits}", [lay])


def gemv_wide(a_bits=2, w_bits=2, seed=103) -> dict:
    lay = gemv_layer("fc0", [1, 1, 1, 128], 256, a_bits, w_bits, a_bits, seed)
    return model_doc(f"gemv256x128_w{w_bits}a{a_bits}", [lay])


def gemv_chain(a_bits=2, w_bits=2, seed=105, depth=2) -> dict:
    layers = []
    shape = [1, 1, 1, 128]
    for i in range(depth):
        rows = 128 if i < depth - 1 else 64
        layers.append(gemv_layer(f"fc{i}", shape, rows, a_bits, w_bits,
                                 a_bits, seed + 10 * i))
        shape = layers[-1]["output_shape"]
    return model_doc(f"gemvchain{depth}_w{w_bits}a{a_bits}", layers)


def conv_small(a_bits=2, w_bits=2, seed=107, w_range=None) -> dict:
    lay = conv_layer("conv0", [1, 8, 8, 64], 64, 3, 1, 1, a_bits, w_bits,
                     a_bits, seed, w_range=w_range)
    return model_doc(f"convsmall_w{w_bits}a{a_bits}", [lay])


def conv_stride2(a_bits=2, w_bits=2, seed=109, w_range=None) -> dict:
    lay = conv_layer("conv0", [1, 8, 8, 64], 128, 3, 2, 1, a_bits, w_bits,
                     a_bits, seed, w_range=w_range)
    return model_doc(f"convs2_w{w_bits}a{a_bits}", [lay])


def conv_pool(a_bits=2, w_bits=2, seed=111, w_range=None) -> dict:
    # Wide accumulators must still stage losslessly in 16-bit activations
    # ahead of the vertical pool, so the 8-bit variant shrinks the receptive
    # field and weight range.
    if a_bits >= 8:
        lay = conv_layer("conv0", [1, 8, 8, 64], 64, 1, 1, 0, a_bits, w_bits,
                         a_bits, seed, relu=True, pool=True,
                         w_range=(-3, 3), scale_range=(1, 1))
    else:
        lay = conv_layer("conv0", [1, 8, 8, 64], 64, 3, 1, 1, a_bits, w_bits,
                         a_bits, seed, relu=True, pool=True, w_range=w_range)
    return model_doc(f"convpool_w{w_bits}a{a_bits}", [lay])


def conv_rgb(a_bits=2, w_bits=2, seed=127) -> dict:
    # 3 input channels: exercises zero-padding up to the 64-lane tile.
    lay = conv_layer("conv0", [1, 8, 8, 3], 64, 3, 1, 1, a_bits, w_bits,
                     a_bits, seed)
    return model_doc(f"convrgb_w{w_bits}a{a_bits}", [lay])


def conv_nopad(a_bits=2, w_bits=2, seed=113) -> dict:
    lay = conv_layer("conv0", [1, 8, 8, 64], 64, 3, 1, 0, a_bits, w_bits,
                     a_bits, seed)
    return model_doc(f"convnopad_w{w_bits}a{a_bits}", [lay])


def conv_chain2(a_bits=2, w_bits=2, seed=115, w_range=None) -> dict:
    l0 = conv_layer("conv0", [1, 8, 8, 64], 64, 3, 1, 1, a_bits, w_bits,
                    a_bits, seed, w_range=w_range)
    l1 = conv_layer("conv1", l0["output_shape"], 64, 3, 1, 1, a_bits, w_bits,
                    a_bits, seed + 20, w_range=w_range)
    return model_doc(f"convchain2_w{w_bits}a{a_bits}", [l0, l1])


def conv_gemv(a_bits=2, w_bits=2, seed=117) -> dict:
    l0 = conv_layer("conv0", [1, 8, 8, 64], 64, 3, 2, 1, a_bits, w_bits,
                    a_bits, seed)
    l1 = conv_layer("conv1", l0["output_shape"], 128, 1, 1, 0, a_bits, w_bits,
                    a_bits, seed + 20)
    l2 = maxpool_layer("pool0", l1["output_shape"], a_bits)
    l3 = maxpool_layer("pool1", l2["output_shape"], a_bits)
    l4 = gemv_layer("fc", l3["output_shape"], 64, a_bits, w_bits, a_bits,
                    seed + 40)
    return model_doc(f"convgemv_w{w_bits}a{a_bits}", [l0, l1, l2, l3, l4])


def conv_relu_pool_ops(a_bits=2, w_bits=2, seed=119) -> dict:
    l0 = conv_layer("conv0", [1, 8, 8, 64], 64, 3, 1, 1, a_bits, w_bits,
                    a_bits, seed, relu=False)
    l1 = relu_layer("relu0", l0["output_shape"], a_bits)
    l1["prec_a"] = _pd(Precision(a_bits, signed=True))  # conv0 emits signed
    l2 = maxpool_layer("pool0", l1["output_shape"], a_bits)
    return model_doc(f"convops_w{w_bits}a{a_bits}", [l0, l1, l2])


def lap_chain(depth=10, a_bits=2, w_bits=2, seed=121) -> dict:
    layers = []
    shape = [1, 1, 1, 64]
    for i in range(depth):
        layers.append(gemv_layer(f"fc{i}", shape, 64, a_bits, w_bits,
                                 a_bits, seed + 10 * i))
        shape = layers[-1]["output_shape"]
    return model_doc(f"gemvlap{depth}_w{w_bits}a{a_bits}", layers)


def distributed_conv(a_bits=2, w_bits=2, seed=123) -> dict:
    lay = conv_layer("conv0", [1, 16, 16, 64], 64, 3, 1, 1, a_bits, w_bits,
                     a_bits, seed)
    return model_doc(f"dconv_w{w_bits}a{a_bits}", [lay])


def distributed_gemv(a_bits=2, w_bits=2, seed=125) -> dict:
    lay = gemv_layer("fc0", [1, 1, 1, 128], 512, a_bits, w_bits, a_bits, seed)
    return model_doc(f"dgemv_w{w_bits}a{a_bits}", [lay])


def resnet9(a_bits=2, w_bits=2, seed=900) -> dict:
    """Eight quantized stride-downsampling convs, CIFAR-sized."""
    geometry = [  # (c_out, stride)
        (64, 1), (64, 1), (128, 2), (128, 1),
        (256, 2), (256, 1), (512, 2), (512, 1),
    ]
    layers = []
    shape = [1, 32, 32, 64]
    for i, (c_out, stride) in enumerate(geometry):
        lay = conv_layer(f"conv{i + 1}", shape, c_out, 3, stride, 1,
                         a_bits, w_bits, a_bits, seed + 10 * i,
                         scale_range=(1, 2), bias_range=(-4, 4))
        layers.append(lay)
        shape = lay["output_shape"]
    return model_doc("resnet9", layers)


def cnv_like(a_bits=1, w_bits=1, seed=800) -> dict:
    """One 4096-cycle pipeline stage at 1/1 bit: a 1x1 conv over a 64x64 map."""
    lay = conv_layer("conv0", [1, 64, 64, 64], 64, 1, 1, 0, a_bits, w_bits,
                     a_bits, seed, w_range=(0, 1) if w_bits == 1 else None)
    return model_doc(f"cnvlike_w{w_bits}a{a_bits}", [lay])


def matrix_models(a_bits: int, w_bits: int) -> list[dict]:
    """The verification matrix at one precision combination."""
    return [
        gemv64(a_bits, w_bits),
        gemv_wide(a_bits, w_bits),
        gemv_chain(a_bits, w_bits),
        conv_small(a_bits, w_bits),
        conv_stride2(a_bits, w_bits),
        conv_pool(a_bits, w_bits),
        conv_rgb(a_bits, w_bits),
        conv_nopad(a_bits, w_bits),
        conv_chain2(a_bits, w_bits),
        conv_gemv(a_bits, w_bits),
    ]


def random_input(model_doc_: dict, seed: int) -> list[int]:
    model = model_from_dict(model_doc_)
    lay0 = model.layers[0]
    n = 1
    for d in lay0.input_shape:
        n *= d
    return SplitMix64(seed).ints(n, lay0.prec_a.lo, lay0.prec_a.hi)
