"""Compiler: lowers a ModelIR chain into RAM images, job descriptors and
controller assembly.

Layer mapping
    Pipelined   layer i runs on MVU i mod 8 (laps of up to 8 layers);
                activations stream to the next MVU over the interconnect.
    Distributed every layer is split into 8 output-row bands; all MVUs hold
                identical weights and write their band to their own RAM.

Activation storage is NHWC with channels blocked 64-wide and bit-transposed:
word address of (row, stored_col, block, plane) is
``((row*cols + col)*c_blocks + block)*bits + plane``.  Horizontal padding is
materialized as zero columns so edge columns cost full cycles (matching the
calibrated cost model); vertically, only output rows whose receptive field
is fully interior are computed on the MVU - the simulator's host side fills
in the top/bottom rows at layer completion.

2x2 max pooling runs as a horizontal window-2 pool fused into the conv row
jobs (writing a staging buffer in the MVU's own RAM) followed by one
vertical window-2 pass of identity-weight jobs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from . import csrdefs as csr
from .barrel import DRAM_BASE, HARTS
from .bitserial import Precision, transpose
from .ir import LayerIR, ModelIR, UnsupportedOp, UnsupportedShape
from .mvu import (
    ACT_DEPTH_DEFAULT,
    AguConfig,
    BIAS_DEPTH_DEFAULT,
    JobDescriptor,
    LANES,
    SCALER_DEPTH_DEFAULT,
    WGT_ROWS_DEFAULT,
)

FLAG_BASE = DRAM_BASE  # data-RAM word (layer*8 + hart)*4 set when a phase ends


class CompileError(Exception):
    pass


@dataclass(frozen=True)
class RamConfig:
    act_depth: int = ACT_DEPTH_DEFAULT
    wgt_rows: int = WGT_ROWS_DEFAULT
    scaler_depth: int = SCALER_DEPTH_DEFAULT
    bias_depth: int = BIAS_DEPTH_DEFAULT

    @property
    def stage_base(self) -> int:
        return self.act_depth // 2


@dataclass(frozen=True)
class ActLayout:
    """Bit-transposed NHWC activation layout inside one RAM region."""

    rows: int
    cols: int      # stored columns = logical + 2*pad
    pad: int
    c_blocks: int
    bits: int
    base: int = 0
    row0: int = 0  # first logical row held (distributed halo bands)

    def addr(self, row: int, col_stored: int, cblock: int = 0, plane: int = 0) -> int:
        r = row - self.row0
        return self.base + ((r * self.cols + col_stored) * self.c_blocks
                            + cblock) * self.bits + plane

    @property
    def words(self) -> int:
        return self.rows * self.cols * self.c_blocks * self.bits

    def to_json_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "pad": self.pad,
                "c_blocks": self.c_blocks, "bits": self.bits,
                "base": self.base, "row0": self.row0}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ActLayout":
        return cls(**d)


def blocks(n: int) -> int:
    return (n + LANES - 1) // LANES


@dataclass(frozen=True)
class TilePlan:
    """64x64 tiling of one layer's weight tensor, zero-padded as needed."""

    kind: str
    c_in: int
    c_out: int
    c_blocks: int
    c_out_sets: int
    kernel: int = 1
    weight_rows: int = 0       # rows used by weight tiles (excl. identity row)
    identity_row: Optional[int] = None

    @property
    def total_rows(self) -> int:
        return self.weight_rows + (1 if self.identity_row is not None else 0)


def tile_and_pad(layer: LayerIR) -> TilePlan:
    """Round channel dimensions up to 64-wide tiles; pads are zero weights."""
    if layer.kind == "conv2d":
        c_o, c_i, k, _ = layer.kernel
        cb, cs = blocks(c_i), blocks(c_o)
        rows = cs * k * k * cb * layer.prec_w.bits
        ident = rows if layer.pool > 1 else None
        return TilePlan("conv2d", c_i, c_o, cb, cs, kernel=k,
                        weight_rows=rows, identity_row=ident)
    if layer.kind in ("gemm", "gemv"):
        rows_l, cols_l = layer.kernel
        cb, cs = blocks(cols_l), blocks(rows_l)
        return TilePlan(layer.kind, cols_l, rows_l, cb, cs,
                        weight_rows=cs * cb * layer.prec_w.bits)
    if layer.kind in ("maxpool", "relu"):
        c = layer.input_shape[3]
        cb = blocks(c)
        return TilePlan(layer.kind, c, c, cb, cb, weight_rows=0, identity_row=0)
    raise UnsupportedOp(layer.kind)


def _identity_row_words() -> list[int]:
    return [1 << lane for lane in range(LANES)]


def export_weights(layer: LayerIR, plan: TilePlan) -> list[int]:
    """Weight RAM image: 64 words per 4096-bit row, tile layout
    [c_out_set][f_h][f_w][c_block][plane], MSB plane row first."""
    bw = layer.prec_w.bits if layer.prec_w else 1
    words = [0] * (plan.total_rows * LANES)
    if plan.kind == "conv2d":
        c_o, c_i, k, _ = layer.kernel
        row = 0
        for o in range(plan.c_out_sets):
            for fh in range(k):
                for fw in range(k):
                    for cb in range(plan.c_blocks):
                        for lane_row in range(LANES):
                            co = o * LANES + lane_row
                            vec = [0] * LANES
                            if co < c_o:
                                for lane in range(LANES):
                                    ci = cb * LANES + lane
                                    if ci < c_i:
                                        vec[lane] = layer.weight(co, ci, fh, fw)
                            t = transpose(vec, layer.prec_w)
                            for p in range(bw):
                                words[(row + p) * LANES + lane_row] = t.planes[p]
                        row += bw
    elif plan.kind in ("gemm", "gemv"):
        rows_l, cols_l = layer.kernel
        row = 0
        for ot in range(plan.c_out_sets):
            for it in range(plan.c_blocks):
                for lane_row in range(LANES):
                    r = ot * LANES + lane_row
                    vec = [0] * LANES
                    if r < rows_l:
                        for lane in range(LANES):
                            c = it * LANES + lane
                            if c < cols_l:
                                vec[lane] = layer.weights[r * cols_l + c]
                    t = transpose(vec, layer.prec_w)
                    for p in range(bw):
                        words[(row + p) * LANES + lane_row] = t.planes[p]
                row += bw
    if plan.identity_row is not None:
        words[plan.identity_row * LANES:(plan.identity_row + 1) * LANES] = \
            _identity_row_words()
    return words


def import_weights(layer: LayerIR, plan: TilePlan, words: list[int]) -> list[int]:
    """Inverse of :func:`export_weights` back to the logical weight array."""
    bw = layer.prec_w.bits
    sign_bias = 1 << bw

    def element(row_base: int, lane_row: int, lane: int) -> int:
        v = 0
        for p in range(bw):
            v = (v << 1) | ((words[(row_base + p) * LANES + lane_row] >> lane) & 1)
        if layer.prec_w.signed and v >= (1 << (bw - 1)):
            v -= sign_bias
        return v

    if plan.kind == "conv2d":
        c_o, c_i, k, _ = layer.kernel
        out = [0] * (c_o * c_i * k * k)
        for o in range(plan.c_out_sets):
            for fh in range(k):
                for fw in range(k):
                    for cb in range(plan.c_blocks):
                        row = (((o * k + fh) * k + fw) * plan.c_blocks + cb) * bw
                        for lane_row in range(LANES):
                            co = o * LANES + lane_row
                            if co >= c_o:
                                continue
                            for lane in range(LANES):
                                ci = cb * LANES + lane
                                if ci >= c_i:
                                    continue
                                out[((co * c_i + ci) * k + fh) * k + fw] = \
                                    element(row, lane_row, lane)
        return out
    rows_l, cols_l = layer.kernel
    out = [0] * (rows_l * cols_l)
    for ot in range(plan.c_out_sets):
        for it in range(plan.c_blocks):
            row = (ot * plan.c_blocks + it) * bw
            for lane_row in range(LANES):
                r = ot * LANES + lane_row
                if r >= rows_l:
                    continue
                for lane in range(LANES):
                    c = it * LANES + lane
                    if c < cols_l:
                        out[r * cols_l + c] = element(row, lane_row, lane)
    return out


def export_scaler_bias(layer: LayerIR, plan: TilePlan) -> tuple[list[int], list[int]]:
    n = plan.c_out_sets * LANES
    scaler = [1] * n
    bias = [0] * n
    if layer.has_matrix:
        for co in range(layer.out_channels):
            scaler[co] = layer.scale[co]
            bias[co] = layer.bias[co]
    return scaler, bias


def interior_rows(h_in: int, k: int, stride: int, pad: int, h_out: int) -> list[int]:
    return [r for r in range(h_out)
            if r * stride - pad >= 0 and r * stride - pad + k <= h_in]


def pool_stage_bits(layer: LayerIR) -> Precision:
    """Storage precision of the horizontal-pool staging buffer.

    Pooling must happen on pre-quantization values (the quantizer window is
    not monotone once values wrap above it), so the fused horizontal pool
    stores the full scaled range losslessly and the vertical pass applies
    the layer's real window.  Exact per-channel interval bounds size the
    staging width.
    """
    c_o = layer.kernel[0]
    n_terms = layer.kernel[1] * layer.kernel[2] * layer.kernel[3]
    alo, ahi = layer.prec_a.lo, layer.prec_a.hi
    glo = ghi = 0
    for o in range(c_o):
        lo = hi = 0
        base = o * n_terms
        for t in range(n_terms):
            wv = layer.weights[base + t]
            lo += min(wv * alo, wv * ahi)
            hi += max(wv * alo, wv * ahi)
        glo = min(glo, lo * layer.scale[o] + layer.bias[o])
        ghi = max(ghi, hi * layer.scale[o] + layer.bias[o])
    if layer.relu:
        width = max(1, max(0, ghi).bit_length())
        signed = False
    else:
        width = max(abs(glo).bit_length(), ghi.bit_length()) + 1
        signed = True
    if width > 16:
        raise CompileError(
            f"{layer.name}: pooled intermediate needs {width} bits; "
            "staging is limited to 16-bit activations")
    return Precision(width, signed)


@dataclass
class PhaseSpec:
    """One program phase: a (cset x row) job loop on one MVU.

    The controller writes the static CSRs once, then per job advances the
    five base-address CSRs by fixed strides.  ``jobs`` lists the resulting
    descriptors in program order for validation and direct execution.
    """

    mvu: int
    layer: str
    name: str
    static_csrs: dict[int, int]
    n_csets: int
    n_rows: int
    act_base0: int
    act_row_stride: int
    out_base0: int
    out_row_stride: int
    out_cset_stride: int
    wgt_base0: int
    wgt_cset_stride: int
    sb_base0: int
    sb_cset_stride: int
    jobs: list[JobDescriptor] = field(default_factory=list)

    def base_addrs(self, cset: int, row_i: int) -> tuple[int, int, int, int]:
        act = self.act_base0 + row_i * self.act_row_stride
        out = (self.out_base0 + cset * self.out_cset_stride
               + row_i * self.out_row_stride)
        wgt = self.wgt_base0 + cset * self.wgt_cset_stride
        sb = self.sb_base0 + cset * self.sb_cset_stride
        return act, out, wgt, sb


def _static_csrs(desc: JobDescriptor) -> dict[int, int]:
    """Everything but the five AGU base addresses, as CSR writes."""
    out = {
        csr.MVU_PREC_A: desc.prec_a.bits | (int(desc.prec_a.signed) << 5),
        csr.MVU_PREC_W: desc.prec_w.bits | (int(desc.prec_w.signed) << 5),
        csr.MVU_COUNTDOWN: desc.countdown,
        csr.MVU_SCALER_EN: int(desc.scaler_enable),
        csr.MVU_POOL_WINDOW: desc.pool_window,
        csr.MVU_RELU_EN: int(desc.relu_enable),
        csr.MVU_QUANT_MSB: desc.quant_msb,
        csr.MVU_QUANT_BITS: desc.quant_bits,
        csr.MVU_DEST_MASK: desc.dest_mask,
        csr.MVU_DEST_BASE: desc.dest_base,
    }
    for idx, cfg in enumerate([desc.agu_act, desc.agu_wgt, desc.agu_scaler,
                               desc.agu_bias, desc.agu_out]):
        for lvl in range(5):
            count = cfg.loop_counts[lvl] if lvl < len(cfg.loop_counts) else 0
            jump = cfg.loop_jumps[lvl] if lvl < len(cfg.loop_counts) else 0
            out[csr.agu_csr(idx, csr.AGU_COUNT0 + lvl)] = count
            out[csr.agu_csr(idx, csr.AGU_JUMP0 + lvl)] = jump & 0xFFFFFFFF
    return out


def _mk_job(template: JobDescriptor, act: int, out: int, wgt: int, sb: int) \
        -> JobDescriptor:
    from dataclasses import replace
    return replace(
        template,
        agu_act=AguConfig(template.agu_act.loop_counts,
                          template.agu_act.loop_jumps, act),
        agu_wgt=AguConfig(template.agu_wgt.loop_counts,
                          template.agu_wgt.loop_jumps, wgt),
        agu_scaler=AguConfig(template.agu_scaler.loop_counts,
                             template.agu_scaler.loop_jumps, sb),
        agu_bias=AguConfig(template.agu_bias.loop_counts,
                           template.agu_bias.loop_jumps, sb),
        agu_out=AguConfig(template.agu_out.loop_counts,
                          template.agu_out.loop_jumps, out))


def _fill_jobs(phase: PhaseSpec, template: JobDescriptor) -> None:
    for cset in range(phase.n_csets):
        for row_i in range(phase.n_rows):
            act, out, wgt, sb = phase.base_addrs(cset, row_i)
            phase.jobs.append(_mk_job(template, act, out, wgt, sb))


def conv_phase(layer: LayerIR, plan: TilePlan, mvu: int,
               l_in: ActLayout, l_out: ActLayout, rows: list[int],
               dest_mask: int, hpool: bool, wgt_row_base: int = 0) -> PhaseSpec:
    """Row jobs for a conv layer: AGU nest [C_b, F_W, F_H, W_out].

    With ``hpool`` the flush stream pools column pairs and the quantizer
    passes the scaled value through losslessly at the staging width; the
    vertical pass applies the layer's real window afterwards.
    """
    ba, bw = layer.prec_a.bits, layer.prec_w.bits
    k, s = plan.kernel, layer.stride
    cb, cs = plan.c_blocks, plan.c_out_sets
    w_out = (layer.input_shape[2] + 2 * layer.padding - k) // s + 1
    colp = cb * ba                      # one stored column
    rowp = l_in.cols * colp

    d_fh = rowp - (k - 1) * colp - (cb - 1) * ba
    d_w = s * colp - (k - 1) * rowp - (k - 1) * colp - (cb - 1) * ba
    agu_act = AguConfig((cb, k, k, w_out), (ba, ba, d_fh, d_w), 0)
    agu_wgt = AguConfig((cb, k, k, w_out),
                        (bw, bw, bw, -(k * k * cb - 1) * bw), 0)
    agu_scaler = AguConfig((w_out,), (0,), 0)
    if hpool:
        bits_out = l_out.bits  # staging width: lossless passthrough
        agu_out = AguConfig((w_out // 2,), (l_out.c_blocks * bits_out,), 0)
        window = 2
        quant_msb = bits_out - 1
    else:
        bits_out = layer.prec_out.bits
        agu_out = AguConfig((w_out,), (l_out.c_blocks * bits_out,), 0)
        window = 1
        quant_msb = layer.quant_msb
    template = JobDescriptor(
        prec_a=layer.prec_a, prec_w=layer.prec_w,
        agu_act=agu_act, agu_wgt=agu_wgt, agu_scaler=agu_scaler,
        agu_bias=agu_scaler, agu_out=agu_out,
        countdown=ba * bw * cb * k * k * w_out,
        scaler_enable=True, pool_window=window, relu_enable=layer.relu,
        quant_msb=quant_msb, quant_bits=bits_out,
        dest_mask=dest_mask, dest_base=0)

    r0 = rows[0]
    phase = PhaseSpec(
        mvu=mvu, layer=layer.name, name="conv",
        static_csrs=_static_csrs(template),
        n_csets=cs, n_rows=len(rows),
        act_base0=l_in.addr(r0 * s - layer.padding, 0, 0),
        act_row_stride=s * rowp,
        out_base0=l_out.addr(r0, l_out.pad, 0),
        out_row_stride=l_out.cols * l_out.c_blocks * bits_out,
        out_cset_stride=bits_out,
        wgt_base0=wgt_row_base,
        wgt_cset_stride=k * k * cb * bw,
        sb_base0=0, sb_cset_stride=LANES)
    _fill_jobs(phase, template)
    return phase


def vpool_phase(layer: LayerIR, plan: TilePlan, mvu: int,
                l_stage: ActLayout, l_out: ActLayout, pooled_rows: list[int],
                dest_mask: int, identity_row: int,
                stage_prec: Precision) -> PhaseSpec:
    """Vertical window-2 pool: identity-weight pass over staged row pairs,
    applying the layer's real quantizer window on the pooled values."""
    b = stage_prec.bits
    b_out = layer.prec_out.bits
    cs = l_stage.c_blocks
    w2 = l_stage.cols
    rowp = w2 * cs * b
    colp = cs * b
    n_pr = len(pooled_rows)
    visits = 2 * w2 * cs * n_pr
    agu_act = AguConfig(
        (2, w2, cs, n_pr),
        (rowp, colp - rowp, b - rowp - (w2 - 1) * colp,
         2 * rowp - rowp - (w2 - 1) * colp - (cs - 1) * b), 0)
    ocolp = l_out.c_blocks * b_out
    agu_out = AguConfig(
        (w2, cs, n_pr),
        (ocolp, b_out - (w2 - 1) * ocolp,
         l_out.cols * ocolp - (w2 - 1) * ocolp - (cs - 1) * b_out), 0)
    template = JobDescriptor(
        prec_a=stage_prec, prec_w=Precision(1),
        agu_act=agu_act,
        agu_wgt=AguConfig((visits,), (0,), identity_row),
        agu_scaler=AguConfig((1,), (0,), 0),
        agu_bias=AguConfig((1,), (0,), 0),
        agu_out=agu_out,
        countdown=b * visits,
        scaler_enable=False, pool_window=2, relu_enable=layer.relu,
        quant_msb=layer.quant_msb if layer.kind == "conv2d" else b_out - 1,
        quant_bits=b_out,
        dest_mask=dest_mask, dest_base=0)

    pr0 = pooled_rows[0]
    phase = PhaseSpec(
        mvu=mvu, layer=layer.name, name="vpool",
        static_csrs=_static_csrs(template),
        n_csets=1, n_rows=1,
        act_base0=l_stage.addr(2 * pr0, 0, 0),
        act_row_stride=0,
        out_base0=l_out.addr(pr0, l_out.pad, 0),
        out_row_stride=0, out_cset_stride=0,
        wgt_base0=identity_row, wgt_cset_stride=0,
        sb_base0=0, sb_cset_stride=0)
    _fill_jobs(phase, template)
    return phase


def gemv_phase(layer: LayerIR, plan: TilePlan, mvu: int,
               l_in: ActLayout, l_out: ActLayout,
               out_sets: list[int], dest_mask: int) -> PhaseSpec:
    """One job: AGU nest [input tiles, output tiles]."""
    ba, bw = layer.prec_a.bits, layer.prec_w.bits
    t_in = plan.c_blocks
    t_out = len(out_sets)
    b_out = layer.prec_out.bits
    template = JobDescriptor(
        prec_a=layer.prec_a, prec_w=layer.prec_w,
        agu_act=AguConfig((t_in, t_out), (ba, -ba * (t_in - 1)), 0),
        agu_wgt=AguConfig((t_in, t_out), (bw, bw), 0),
        agu_scaler=AguConfig((t_out,), (LANES,), 0),
        agu_bias=AguConfig((t_out,), (LANES,), 0),
        agu_out=AguConfig((t_out,), (b_out,), 0),
        countdown=ba * bw * t_in * t_out,
        scaler_enable=True, pool_window=1, relu_enable=layer.relu,
        quant_msb=layer.quant_msb, quant_bits=b_out,
        dest_mask=dest_mask, dest_base=0)
    os0 = out_sets[0]
    phase = PhaseSpec(
        mvu=mvu, layer=layer.name, name="gemv",
        static_csrs=_static_csrs(template),
        n_csets=1, n_rows=1,
        act_base0=l_in.base,
        act_row_stride=0,
        out_base0=l_out.base + os0 * b_out,
        out_row_stride=0, out_cset_stride=0,
        wgt_base0=os0 * t_in * bw, wgt_cset_stride=0,
        sb_base0=os0 * LANES, sb_cset_stride=0)
    _fill_jobs(phase, template)
    return phase


def identity_phase(layer: LayerIR, plan: TilePlan, mvu: int,
                   l_in: ActLayout, l_out: ActLayout, rows: list[int],
                   dest_mask: int, hpool: bool, identity_row: int,
                   name: str) -> PhaseSpec:
    """Element passthrough (relu / standalone pool): identity-weight jobs."""
    b_in = layer.prec_a.bits
    b_out = layer.prec_out.bits
    cs = plan.c_blocks
    w_log = l_in.cols - 2 * l_in.pad
    n_rows = len(rows)
    colp = cs * b_in
    rowp = l_in.cols * colp
    visits = w_log * cs * n_rows
    # Column-major flush order within a row so horizontal pool windows are
    # consecutive; channel sets next, rows outermost.
    agu_act = AguConfig(
        (w_log, cs, n_rows),
        (colp, b_in - (w_log - 1) * colp,
         rowp - (cs - 1) * b_in - (w_log - 1) * colp), l_in.addr(rows[0], l_in.pad, 0))
    ocolp = l_out.c_blocks * b_out
    if hpool:
        w_out = w_log // 2
        window = 2
    else:
        w_out = w_log
        window = 1
    agu_out = AguConfig(
        (w_out, cs, n_rows),
        (ocolp, b_out - (w_out - 1) * ocolp,
         l_out.cols * ocolp - (cs - 1) * b_out - (w_out - 1) * ocolp),
        l_out.addr(rows[0], l_out.pad, 0))
    template = JobDescriptor(
        prec_a=layer.prec_a, prec_w=Precision(1),
        agu_act=agu_act,
        agu_wgt=AguConfig((visits,), (0,), identity_row),
        agu_scaler=AguConfig((1,), (0,), 0),
        agu_bias=AguConfig((1,), (0,), 0),
        agu_out=agu_out,
        countdown=b_in * visits,
        scaler_enable=False, pool_window=window,
        relu_enable=layer.relu or layer.kind == "relu",
        quant_msb=layer.prec_out.bits - 1, quant_bits=b_out,
        dest_mask=dest_mask, dest_base=0)
    phase = PhaseSpec(
        mvu=mvu, layer=layer.name, name=name,
        static_csrs=_static_csrs(template),
        n_csets=1, n_rows=1,
        act_base0=template.agu_act.base, act_row_stride=0,
        out_base0=template.agu_out.base, out_row_stride=0, out_cset_stride=0,
        wgt_base0=identity_row, wgt_cset_stride=0,
        sb_base0=0, sb_cset_stride=0)
    _fill_jobs(phase, template)
    return phase


# ---------------------------------------------------------------------------
# Activation placement and readback
# ---------------------------------------------------------------------------

def act_layout_for(shape: tuple[int, int, int, int], bits: int, pad: int,
                   base: int = 0, row0: int = 0,
                   rows: Optional[int] = None) -> ActLayout:
    _, h, w, c = shape
    return ActLayout(rows=rows if rows is not None else h, cols=w + 2 * pad,
                     pad=pad, c_blocks=blocks(c), bits=bits, base=base,
                     row0=row0)


def place_rows(ram: list[int], layout: ActLayout, tensor, prec: Precision,
               rows: list[int], w_logical: int, channels: int) -> None:
    """Write logical NHWC rows into a RAM region, bit-transposed, zero-padded.

    ``tensor[r][col][ch]`` indexing; pad columns and pad channel lanes are
    written as zeros.
    """
    mask = (1 << prec.bits) - 1
    for r in rows:
        for col_s in range(layout.cols):
            col = col_s - layout.pad
            for cb in range(layout.c_blocks):
                if 0 <= col < w_logical:
                    patterns = [
                        (int(tensor[r][col][cb * LANES + lane]) & mask)
                        if cb * LANES + lane < channels else 0
                        for lane in range(LANES)]
                else:
                    patterns = [0] * LANES
                a = layout.addr(r, col_s, cb)
                for p in range(prec.bits):
                    pos = prec.bits - 1 - p
                    word = 0
                    for lane, pat in enumerate(patterns):
                        word |= ((pat >> pos) & 1) << lane
                    ram[a + p] = word


def read_rows(ram: list[int], layout: ActLayout, prec: Precision,
              rows: list[int], w_logical: int, channels: int) -> list[list[list[int]]]:
    """Read logical NHWC rows back out of a RAM region."""
    out = []
    sign_bias = 1 << prec.bits
    for r in rows:
        row_vals = []
        for col in range(w_logical):
            col_s = col + layout.pad
            ch_vals = []
            for cb in range(layout.c_blocks):
                a = layout.addr(r, col_s, cb)
                for lane in range(LANES):
                    ch = cb * LANES + lane
                    if ch >= channels:
                        break
                    v = 0
                    for p in range(prec.bits):
                        v = (v << 1) | ((ram[a + p] >> lane) & 1)
                    if prec.signed and v >= (1 << (prec.bits - 1)):
                        v -= sign_bias
                    ch_vals.append(v)
            row_vals.append(ch_vals)
        out.append(row_vals)
    return out


# ---------------------------------------------------------------------------
# Layer lowering
# ---------------------------------------------------------------------------

@dataclass
class OutTarget:
    mvu: int
    layout: ActLayout
    rows: list[int]  # logical output rows this target receives


@dataclass
class LoweredLayer:
    layer: LayerIR
    plan: TilePlan
    lap: int
    index: int
    mvus: list[int]
    phases: list[PhaseSpec]
    host_rows: list[int]
    in_layouts: dict[int, ActLayout]
    out_targets: list[OutTarget]
    stage_layouts: dict[int, ActLayout]
    weight_words: list[int]
    scaler_vals: list[int]
    bias_vals: list[int]

    @property
    def cycles(self) -> int:
        return sum(j.countdown for ph in self.phases for j in ph.jobs)


def _bands(n: int, parts: int = HARTS) -> list[list[int]]:
    base, rem = divmod(n, parts)
    out = []
    start = 0
    for m in range(parts):
        size = base + (1 if m < rem else 0)
        out.append(list(range(start, start + size)))
        start += size
    return out


def _conv_mvu_rows(layer: LayerIR) -> tuple[list[int], list[int], list[int]]:
    """(all output rows, mvu-computable rows, host rows) for a conv layer."""
    _, h, _, _ = layer.input_shape
    k = layer.kernel[2]
    oh_conv = (h + 2 * layer.padding - k) // layer.stride + 1
    interior = interior_rows(h, k, layer.stride, layer.padding, oh_conv)
    if layer.pool > 1:
        pooled = list(range(oh_conv // 2))
        ok = [pr for pr in pooled
              if 2 * pr in interior and 2 * pr + 1 in interior]
        host = [pr for pr in pooled if pr not in ok]
        return pooled, ok, host
    host = [r for r in range(oh_conv) if r not in interior]
    return list(range(oh_conv)), interior, host


def lower_pipelined_layer(layer: LayerIR, plan: TilePlan, mvu: int,
                          l_in: ActLayout, out_target: OutTarget,
                          ram: RamConfig) -> tuple[list[PhaseSpec], list[int],
                                                   dict[int, ActLayout]]:
    dest_mask = 1 << out_target.mvu
    l_out = out_target.layout
    if layer.kind == "conv2d":
        _, mvu_rows, host = _conv_mvu_rows(layer)
        if not mvu_rows:
            raise CompileError(f"{layer.name}: no fully-interior rows to map")
        if layer.pool > 1:
            _, h, w, _ = layer.input_shape
            k = layer.kernel[2]
            oh_conv = (h + 2 * layer.padding - k) // layer.stride + 1
            ow_conv = (w + 2 * layer.padding - k) // layer.stride + 1
            interior = interior_rows(h, k, layer.stride, layer.padding, oh_conv)
            stage_prec = pool_stage_bits(layer)
            stage = ActLayout(rows=oh_conv, cols=ow_conv // 2, pad=0,
                              c_blocks=plan.c_out_sets, bits=stage_prec.bits,
                              base=ram.stage_base)
            conv = conv_phase(layer, plan, mvu, l_in, stage, interior,
                              1 << mvu, hpool=True)
            vp = vpool_phase(layer, plan, mvu, stage, l_out, mvu_rows,
                             dest_mask, plan.identity_row, stage_prec)
            return [conv, vp], host, {mvu: stage}
        conv = conv_phase(layer, plan, mvu, l_in, l_out, mvu_rows,
                          dest_mask, hpool=False)
        return [conv], host, {}
    if layer.kind in ("gemm", "gemv"):
        ph = gemv_phase(layer, plan, mvu, l_in, l_out,
                        list(range(plan.c_out_sets)), dest_mask)
        return [ph], [], {}
    if layer.kind == "relu":
        rows = list(range(layer.input_shape[1]))
        ph = identity_phase(layer, plan, mvu, l_in, l_out, rows, dest_mask,
                            hpool=False, identity_row=plan.identity_row,
                            name="relu")
        return [ph], [], {}
    if layer.kind == "maxpool":
        _, h, w, _ = layer.input_shape
        stage = ActLayout(rows=h, cols=w // 2, pad=0, c_blocks=plan.c_blocks,
                          bits=layer.prec_a.bits, base=ram.stage_base)
        pa = identity_phase(layer, plan, mvu, l_in, stage, list(range(h)),
                            1 << mvu, hpool=True,
                            identity_row=plan.identity_row, name="hpool")
        pooled = list(range(h // 2))
        pb = vpool_phase(layer, plan, mvu, stage, l_out, pooled, dest_mask,
                         plan.identity_row, layer.prec_a)
        return [pa, pb], [], {mvu: stage}
    raise UnsupportedOp(layer.kind)


def lower_distributed_layer(layer: LayerIR, plan: TilePlan, ram: RamConfig) \
        -> tuple[list[PhaseSpec], list[int], dict[int, ActLayout],
                 list[OutTarget]]:
    """Split one layer's output rows (or tiles) into 8 bands, one per MVU."""
    if layer.pool > 1 or layer.kind == "maxpool":
        raise CompileError(
            f"{layer.name}: pooling is not supported in distributed mode")
    phases: list[PhaseSpec] = []
    in_layouts: dict[int, ActLayout] = {}
    out_targets: list[OutTarget] = []

    if layer.kind in ("gemm", "gemv"):
        l_out_full = act_layout_for(layer.output_shape, layer.prec_out.bits,
                                    0, base=ram.stage_base)
        for m, sets in enumerate(_bands(plan.c_out_sets)):
            l_in = act_layout_for(layer.input_shape, layer.prec_a.bits, 0)
            in_layouts[m] = l_in
            if sets:
                phases.append(gemv_phase(layer, plan, m, l_in, l_out_full,
                                         sets, 1 << m))
            out_targets.append(OutTarget(m, l_out_full, sets))
        return phases, [], in_layouts, out_targets

    if layer.kind == "conv2d":
        out_rows, mvu_rows, host = _conv_mvu_rows(layer)
        _, h, w, _ = layer.input_shape
        k, s, p = layer.kernel[2], layer.stride, layer.padding
        l_out_full = act_layout_for(layer.output_shape, layer.prec_out.bits,
                                    0, base=ram.stage_base)
        for m, band in enumerate(_bands(len(out_rows))):
            rows = [r for r in band if r in mvu_rows]
            if rows:
                row0 = rows[0] * s - p
                row_end = rows[-1] * s - p + k
                l_in = act_layout_for(layer.input_shape, layer.prec_a.bits,
                                      p, row0=row0, rows=row_end - row0)
                in_layouts[m] = l_in
                phases.append(conv_phase(layer, plan, m, l_in, l_out_full,
                                         rows, 1 << m, hpool=False))
            out_targets.append(OutTarget(m, l_out_full, rows))
        return phases, host, in_layouts, out_targets

    if layer.kind == "relu":
        l_out_full = act_layout_for(layer.output_shape, layer.prec_out.bits,
                                    0, base=ram.stage_base)
        for m, rows in enumerate(_bands(layer.input_shape[1])):
            if rows:
                l_in = act_layout_for(layer.input_shape, layer.prec_a.bits, 0,
                                      row0=rows[0], rows=len(rows))
                in_layouts[m] = l_in
                phases.append(identity_phase(layer, plan, m, l_in, l_out_full,
                                             rows, 1 << m, hpool=False,
                                             identity_row=plan.identity_row,
                                             name="relu"))
            out_targets.append(OutTarget(m, l_out_full, rows))
        return phases, [], in_layouts, out_targets

    raise UnsupportedOp(layer.kind)


# ---------------------------------------------------------------------------
# Whole-model compilation
# ---------------------------------------------------------------------------

@dataclass
class CompiledProgram:
    doc: dict
    model: ModelIR
    mode: str
    ram: RamConfig
    laps: list[list[int]]                  # layer indices per lap
    lowered: list[LoweredLayer]
    asm_source: str
    input_layouts: dict[int, ActLayout]    # entry placement per MVU
    final_targets: list[OutTarget]

    @property
    def total_cycles(self) -> int:
        return sum(ll.cycles for ll in self.lowered)

    def layer_cycles(self) -> list[tuple[str, int]]:
        return [(ll.layer.name, ll.cycles) for ll in self.lowered]

    def schedule_dict(self) -> dict:
        return {
            "mode": self.mode,
            "laps": self.laps,
            "layers": [
                {
                    "name": ll.layer.name,
                    "kind": ll.layer.kind,
                    "lap": ll.lap,
                    "mvus": ll.mvus,
                    "cycles": ll.cycles,
                    "host_rows": ll.host_rows,
                    "phases": [
                        {"mvu": ph.mvu, "name": ph.name,
                         "jobs": [j.to_json_dict() for j in ph.jobs]}
                        for ph in ll.phases],
                }
                for ll in self.lowered],
        }

    def manifest_dict(self) -> dict:
        return {
            "format": 1,
            "mode": self.mode,
            "model_file": "model.json",
            "program_file": "program.asm",
            "clock_hz": self.model.clock_hz,
            "ram": {"act_depth": self.ram.act_depth,
                    "wgt_rows": self.ram.wgt_rows,
                    "scaler_depth": self.ram.scaler_depth,
                    "bias_depth": self.ram.bias_depth},
            "flag_base": FLAG_BASE,
            "input_layouts": {str(m): lay.to_json_dict()
                              for m, lay in self.input_layouts.items()},
            "final_targets": [
                {"mvu": t.mvu, "rows": t.rows, "layout": t.layout.to_json_dict()}
                for t in self.final_targets],
            "weight_files": {
                str(m): {str(lap): _weight_file(m, lap)
                         for lap in range(len(self.laps))
                         if any(ll.lap == lap and m in ll.mvus
                                for ll in self.lowered)}
                for m in range(HARTS)},
        }


def _weight_file(mvu: int, lap: int) -> str:
    return (f"weights_mvu{mvu}.bin" if lap == 0
            else f"weights_mvu{mvu}_lap{lap}.bin")


def _scaler_file(mvu: int, lap: int) -> str:
    return (f"scaler_mvu{mvu}.bin" if lap == 0
            else f"scaler_mvu{mvu}_lap{lap}.bin")


def _bias_file(mvu: int, lap: int) -> str:
    return (f"bias_mvu{mvu}.bin" if lap == 0
            else f"bias_mvu{mvu}_lap{lap}.bin")


def _check_capacity(ll: LoweredLayer, ram: RamConfig) -> None:
    name = ll.layer.name
    if ll.plan.total_rows > ram.wgt_rows:
        raise CompileError(
            f"{name}: {ll.plan.total_rows} weight rows exceed RAM depth "
            f"{ram.wgt_rows}")
    if ll.plan.c_out_sets * LANES > ram.scaler_depth:
        raise CompileError(f"{name}: scaler RAM too small")
    region = ram.stage_base
    for lay in list(ll.in_layouts.values()) + [t.layout for t in ll.out_targets]:
        words = lay.words
        if lay.base == 0 and words > region:
            raise CompileError(f"{name}: activation layout ({words} words) "
                               f"exceeds the input region ({region})")
        if lay.base == ram.stage_base and words > ram.act_depth - ram.stage_base:
            raise CompileError(f"{name}: staging layout exceeds its region")


def compile_model(doc: dict, mode: str = "pipelined",
                  ram: RamConfig = RamConfig()) -> CompiledProgram:
    """Deterministically lower a ModelIR document for one execution mode."""
    from .ir import model_from_dict
    if mode not in ("pipelined", "distributed"):
        raise CompileError(f"unknown mode {mode!r}")
    model = model_from_dict(doc)
    n = len(model.layers)
    if mode == "pipelined":
        laps = [list(range(k, min(k + HARTS, n))) for k in range(0, n, HARTS)]
    else:
        laps = [[j] for j in range(n)]

    lowered: list[LoweredLayer] = []
    input_layouts: dict[int, ActLayout] = {}
    final_targets: list[OutTarget] = []

    if mode == "pipelined":
        pads = [lay.padding if lay.kind == "conv2d" else 0
                for lay in model.layers]
        layouts = [act_layout_for(lay.input_shape, lay.prec_a.bits, pads[j])
                   for j, lay in enumerate(model.layers)]
        final_layout = act_layout_for(model.output_shape,
                                      model.layers[-1].prec_out.bits, 0)
        for j, layer in enumerate(model.layers):
            mvu = j % HARTS
            plan = tile_and_pad(layer)
            dest_mvu = (j + 1) % HARTS
            l_out = layouts[j + 1] if j + 1 < n else final_layout
            target = OutTarget(dest_mvu, l_out,
                               list(range(layer.output_shape[1])))
            phases, host, stages = lower_pipelined_layer(
                layer, plan, mvu, layouts[j], target, ram)
            scaler_vals, bias_vals = export_scaler_bias(layer, plan)
            ll = LoweredLayer(
                layer=layer, plan=plan, lap=j // HARTS, index=j, mvus=[mvu],
                phases=phases, host_rows=host,
                in_layouts={mvu: layouts[j]}, out_targets=[target],
                stage_layouts=stages,
                weight_words=export_weights(layer, plan),
                scaler_vals=scaler_vals, bias_vals=bias_vals)
            _check_capacity(ll, ram)
            lowered.append(ll)
        input_layouts = {0: layouts[0]}
        final_targets = lowered[-1].out_targets
    else:
        for j, layer in enumerate(model.layers):
            plan = tile_and_pad(layer)
            phases, host, in_lays, targets = lower_distributed_layer(
                layer, plan, ram)
            scaler_vals, bias_vals = export_scaler_bias(layer, plan)
            ll = LoweredLayer(
                layer=layer, plan=plan, lap=j, index=j,
                mvus=sorted(in_lays.keys()),
                phases=phases, host_rows=host,
                in_layouts=in_lays, out_targets=targets,
                stage_layouts={},
                weight_words=export_weights(layer, plan),
                scaler_vals=scaler_vals, bias_vals=bias_vals)
            _check_capacity(ll, ram)
            lowered.append(ll)
        input_layouts = dict(lowered[0].in_layouts)
        final_targets = lowered[-1].out_targets

    asm_source = emit_program(model, mode, lowered)
    return CompiledProgram(doc=doc, model=model, mode=mode, ram=ram,
                           laps=laps, lowered=lowered, asm_source=asm_source,
                           input_layouts=input_layouts,
                           final_targets=final_targets)


# ---------------------------------------------------------------------------
# Controller program emission
# ---------------------------------------------------------------------------

def _flag_addr(layer_index: int, hart: int) -> int:
    return FLAG_BASE + (layer_index * HARTS + hart) * 4


class _Emitter:
    def __init__(self):
        self.lines: list[str] = []
        self.n = 0

    def label(self, stem: str) -> str:
        self.n += 1
        return f"{stem}_{self.n}"

    def emit(self, line: str) -> None:
        self.lines.append("    " + line)

    def emit_label(self, lab: str) -> None:
        self.lines.append(f"{lab}:")

    def csr_write(self, addr: int, value: int) -> None:
        name = csr.CSR_NAMES[addr]
        value &= 0xFFFFFFFF
        if value < 32:
            self.emit(f"csrrwi x0, {name}, {value}")
        else:
            signed = value - (1 << 32) if value >= (1 << 31) else value
            self.emit(f"li x30, {signed}")
            self.emit(f"csrw {name}, x30")

    def load_imm(self, reg: str, value: int) -> None:
        signed = value - (1 << 32) if value >= (1 << 31) else value
        self.emit(f"li {reg}, {signed}")


def _emit_phase(e: _Emitter, ph: PhaseSpec) -> None:
    for addr in sorted(ph.static_csrs):
        e.csr_write(addr, ph.static_csrs[addr])
    e.load_imm("x23", ph.act_row_stride)
    e.load_imm("x24", ph.out_row_stride)
    e.load_imm("x25", ph.out_cset_stride - ph.n_rows * ph.out_row_stride)
    e.load_imm("x26", ph.wgt_cset_stride)
    e.load_imm("x27", ph.sb_cset_stride)
    e.load_imm("x20", ph.n_csets)
    e.load_imm("x6", ph.out_base0)
    e.load_imm("x7", ph.wgt_base0)
    e.load_imm("x8", ph.sb_base0)
    l_cset = e.label("cset")
    l_row = e.label("row")
    l_poll = e.label("poll")
    e.emit_label(l_cset)
    e.load_imm("x5", ph.act_base0)
    e.load_imm("x21", ph.n_rows)
    e.emit_label(l_row)
    e.emit("csrw mvuactbase, x5")
    e.emit("csrw mvuoutbase, x6")
    e.emit("csrw mvuwgtbase, x7")
    e.emit("csrw mvuscalerbase, x8")
    e.emit("csrw mvubiasbase, x8")
    e.emit("csrrwi x0, mvustart, 1")
    e.emit_label(l_poll)
    e.emit("csrr x22, mvustatus")
    e.emit(f"beqz x22, {l_poll}")
    e.emit("csrrwi x0, mvustatus, 1")
    e.emit("add x5, x5, x23")
    e.emit("add x6, x6, x24")
    e.emit("addi x21, x21, -1")
    e.emit(f"bnez x21, {l_row}")
    e.emit("add x6, x6, x25")
    e.emit("add x7, x7, x26")
    e.emit("add x8, x8, x27")
    e.emit("addi x20, x20, -1")
    e.emit(f"bnez x20, {l_cset}")


def emit_program(model: ModelIR, mode: str, lowered: list[LoweredLayer]) -> str:
    """Assembly for all harts: per layer, wait for the previous layer's done
    flags, run the job loop(s), then post this hart's done flag."""
    per_hart: dict[int, list[str]] = {h: [] for h in range(HARTS)}
    for h in range(HARTS):
        e = _Emitter()
        e.n = h * 10000  # keep labels unique across hart sections
        emitted = False
        for ll in lowered:
            if mode == "pipelined":
                involved = ll.mvus[0] == h
            else:
                involved = True  # every hart posts a flag, even with no band
            if not involved:
                continue
            waiters = []
            if ll.index > 0:
                prev = lowered[ll.index - 1]
                if mode == "pipelined":
                    waiters = [(prev.index, prev.mvus[0])]
                else:
                    waiters = [(prev.index, m) for m in range(HARTS)]
            for lj, lh in waiters:
                l_wait = e.label("wait")
                e.load_imm("x28", _flag_addr(lj, lh))
                e.emit_label(l_wait)
                e.emit("lw x29, 0(x28)")
                e.emit(f"beqz x29, {l_wait}")
            for ph in ll.phases:
                if ph.mvu == h:
                    _emit_phase(e, ph)
            e.load_imm("x28", _flag_addr(ll.index, h))
            e.emit("addi x29, x0, 1")
            e.emit("sw x29, 0(x28)")
            emitted = True
        if emitted:
            park = e.label("park")
            e.emit_label(park)
            e.emit(f"j {park}")
            per_hart[h] = e.lines
    chunks = []
    for h in range(HARTS):
        if per_hart[h]:
            chunks.append(f".hart {h}")
            chunks.extend(per_hart[h])
    return "\n".join(chunks) + "\n"


# ---------------------------------------------------------------------------
# Output directory
# ---------------------------------------------------------------------------

def write_dir(cp: CompiledProgram, outdir: str) -> None:
    from . import ramimage
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "model.json"), "w") as f:
        json.dump(cp.doc, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(outdir, "program.asm"), "w") as f:
        f.write(cp.asm_source)
    with open(os.path.join(outdir, "schedule.json"), "w") as f:
        json.dump(cp.schedule_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(outdir, "manifest.json"), "w") as f:
        json.dump(cp.manifest_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    for ll in cp.lowered:
        for m in ll.mvus:
            ramimage.save_words64(
                os.path.join(outdir, _weight_file(m, ll.lap)), ll.weight_words)
            ramimage.save_u16(
                os.path.join(outdir, _scaler_file(m, ll.lap)), ll.scaler_vals)
            ramimage.save_i32(
                os.path.join(outdir, _bias_file(m, ll.lap)), ll.bias_vals)


def load_dir(dirpath: str) -> CompiledProgram:
    """Recompile the directory's model for its recorded mode.

    Compilation is a pure function of (model, mode), so the rebuilt plans
    are exactly the ones the directory was written from; the runner loads
    the directory's binary images into RAM and uses the rebuilt plans for
    orchestration.
    """
    with open(os.path.join(dirpath, "manifest.json")) as f:
        manifest = json.load(f)
    with open(os.path.join(dirpath, manifest["model_file"])) as f:
        doc = json.load(f)
    ram = RamConfig(**manifest["ram"])
    return compile_model(doc, manifest["mode"], ram)


def load_dir_images(dirpath: str, cp: CompiledProgram) -> dict:
    """Read the directory's binary RAM images, keyed (kind, mvu, lap)."""
    from . import ramimage
    images: dict = {}
    for ll in cp.lowered:
        for m in ll.mvus:
            images[("weights", m, ll.lap)] = ramimage.load_words64(
                os.path.join(dirpath, _weight_file(m, ll.lap)))
            images[("scaler", m, ll.lap)] = ramimage.load_u16(
                os.path.join(dirpath, _scaler_file(m, ll.lap)))
            images[("bias", m, ll.lap)] = ramimage.load_i32(
                os.path.join(dirpath, _bias_file(m, ll.lap)))
    return images
