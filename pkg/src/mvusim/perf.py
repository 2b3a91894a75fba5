"""Closed-form cycle and throughput estimator.

A conv layer costs ``b_a*b_w * F_H*F_W * ceil(C_i/64) * ceil(C_o/64) *
W_out * R_full`` MVP cycles, where R_full counts output rows whose vertical
receptive field lies fully inside the unpadded input (the row-job unit).
A matrix-vector layer costs ``b_a*b_w * in_tiles * out_tiles``.  Fused
horizontal pooling is free (window elements are consecutive in the flush
stream); the vertical pooling pass is an identity-weight sweep and is
costed at its real cycle count so the estimator matches the simulator
exactly.  Throughput figures use floor division at the configured clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .ir import LayerIR, ModelIR, UnsupportedOp

LANES = 64


def _blocks(n: int) -> int:
    return (n + LANES - 1) // LANES


def _r_full(h_in: int, k: int, stride: int, pad: int, h_out: int) -> int:
    return sum(1 for r in range(h_out)
               if r * stride - pad >= 0 and r * stride - pad + k <= h_in)


def estimate_conv_cycles(layer: LayerIR) -> int:
    if layer.kind != "conv2d":
        raise UnsupportedOp(f"estimate_conv_cycles: {layer.kind}")
    _, h, w, _ = layer.input_shape
    c_o, c_i, k, _ = layer.kernel
    s, p = layer.stride, layer.padding
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    ba, bw = layer.prec_a.bits, layer.prec_w.bits
    cycles = ba * bw * k * k * _blocks(c_i) * _blocks(c_o) * ow * \
        _r_full(h, k, s, p, oh)
    if layer.pool > 1:
        cycles += _vpool_cycles(layer, oh, ow, _blocks(c_o))
    return cycles


def _vpool_cycles(layer: LayerIR, oh_conv: int, ow_conv: int, csets: int) -> int:
    # Identity-weight pass over pooled rows whose two conv rows are interior,
    # reading the lossless staging buffer at its planned width.
    from .codegen import pool_stage_bits
    _, h, _, _ = layer.input_shape
    k = layer.kernel[2]
    interior = set(r for r in range(oh_conv)
                   if r * layer.stride - layer.padding >= 0
                   and r * layer.stride - layer.padding + k <= h)
    n_pr = sum(1 for pr in range(oh_conv // 2)
               if 2 * pr in interior and 2 * pr + 1 in interior)
    return pool_stage_bits(layer).bits * ow_conv * csets * n_pr


def estimate_layer_cycles(layer: LayerIR) -> int:
    if layer.kind == "conv2d":
        return estimate_conv_cycles(layer)
    if layer.kind in ("gemm", "gemv"):
        rows, cols = layer.kernel
        return layer.prec_a.bits * layer.prec_w.bits * \
            _blocks(cols) * _blocks(rows)
    if layer.kind == "relu":
        _, h, w, c = layer.input_shape
        return layer.prec_a.bits * h * w * _blocks(c)
    if layer.kind == "maxpool":
        _, h, w, c = layer.input_shape
        hpool = layer.prec_a.bits * h * w * _blocks(c)
        vpool = layer.prec_out.bits * (w // 2) * _blocks(c) * h
        return hpool + vpool
    raise UnsupportedOp(layer.kind)


@dataclass
class CycleReport:
    per_layer: list[tuple[str, int]]
    total_cycles: int
    clock_hz: float
    fps_pipelined: int
    fps_single: int

    def to_json_dict(self) -> dict:
        return {
            "per_layer": [{"layer": n, "cycles": c} for n, c in self.per_layer],
            "total_cycles": self.total_cycles,
            "clock_hz": self.clock_hz,
            "fps_pipelined": self.fps_pipelined,
            "fps_single": self.fps_single,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1, sort_keys=True)

    def to_table(self) -> str:
        name_w = max([len(n) for n, _ in self.per_layer] + [6])
        lines = [f"{'Layer':<{name_w}}  {'Cycles':>10}",
                 "-" * (name_w + 12)]
        for n, c in self.per_layer:
            lines.append(f"{n:<{name_w}}  {c:>10}")
        lines.append("-" * (name_w + 12))
        lines.append(f"{'Total:':<{name_w}}  {self.total_cycles:>10}")
        return "\n".join(lines)

    def fps_lines(self) -> str:
        return (f"fps (pipelined): {self.fps_pipelined}\n"
                f"fps (single):    {self.fps_single}")


def _lap_stage_cycles(per_layer: list[int]) -> int:
    """Sum over laps of each lap's slowest stage (laps serialize)."""
    total = 0
    for k in range(0, len(per_layer), 8):
        total += max(per_layer[k:k + 8])
    return total


def estimate_model(model: ModelIR, clock_hz: float | None = None) -> CycleReport:
    clock = clock_hz if clock_hz is not None else model.clock_hz
    per_layer = [(lay.name, estimate_layer_cycles(lay)) for lay in model.layers]
    cycles = [c for _, c in per_layer]
    total = sum(cycles)
    fps_pipe = int(clock) // _lap_stage_cycles(cycles) if cycles else 0
    fps_single = int(clock) // total if total else 0
    return CycleReport(per_layer=per_layer, total_cycles=total,
                       clock_hz=clock, fps_pipelined=fps_pipe,
                       fps_single=fps_single)


def fps_scaling_check(base_fps: int, b_a: int, b_w: int) -> int:
    """Throughput at b_a/b_w bits from the 1/1-bit figure: floor division."""
    return base_fps // (b_a * b_w)
