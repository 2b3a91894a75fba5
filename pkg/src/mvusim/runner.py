"""Drives a compiled program on the machine model.

The runner owns the host's side of the bargain: it loads RAM images and the
assembled controller program, places the input tensor, then steps the
machine while watching job-completion events.  When a layer finishes it
plays host: it computes the edge output rows the row jobs skip (rows whose
receptive field overlaps the vertical padding), bulk-writes them and zeroes
the destination's pad columns, redistributes activations between layers in
distributed mode, and swaps weight images at lap boundaries.  Every
completed job is checked against the compiled schedule, so the controller
program's CSR writes are verified to reproduce the planned descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .asm import assemble
from .codegen import (
    CompiledProgram,
    LoweredLayer,
    OutTarget,
    place_rows,
    read_rows,
)
from .ir import LayerIR
from .machine import JobDone, Machine
from .mvu import LANES, SimError


class VerificationError(SimError):
    pass


@dataclass
class SimResult:
    output_shape: tuple[int, int, int, int]
    output_values: list[int]
    layer_cycles: list[tuple[str, int]]
    total_cycles: int
    machine_cycles: int


def _quant(arr: np.ndarray, msb: int, bits: int, signed: bool) -> np.ndarray:
    window = (arr >> (msb - bits + 1)) & ((1 << bits) - 1)
    if signed:
        sign = 1 << (bits - 1)
        window = window - ((window & sign) << 1)
    return window


def _host_conv_rows(layer: LayerIR, x: np.ndarray,
                    out_rows: list[int]) -> dict[int, np.ndarray]:
    """Edge-row outputs computed with zero-filled padding, host-side."""
    _, h, w, c_in = layer.input_shape
    c_o, c_i, k, _ = layer.kernel
    s, p = layer.stride, layer.padding
    ow = (w + 2 * p - k) // s + 1
    xp = np.zeros((h + 2 * p, w + 2 * p, c_in), dtype=np.int64)
    xp[p:p + h, p:p + w, :] = x
    wk = np.asarray(layer.weights, dtype=np.int64).reshape(c_o, c_i, k, k)
    scale = np.asarray(layer.scale, dtype=np.int64)
    bias = np.asarray(layer.bias, dtype=np.int64)

    def conv_row(r: int) -> np.ndarray:
        acc = np.zeros((ow, c_o), dtype=np.int64)
        for fh in range(k):
            for fw in range(k):
                acc += xp[r * s + fh, fw:fw + s * ow:s, :] @ wk[:, :, fh, fw].T
        acc = acc * scale + bias
        if layer.relu:
            acc = np.maximum(acc, 0)
        return acc

    out = {}
    for r in out_rows:
        if layer.pool > 1:
            pair = np.stack([conv_row(2 * r), conv_row(2 * r + 1)])
            pooled = pair.reshape(2, ow // 2, 2, c_o).max(axis=(0, 2))
            out[r] = _quant(pooled, layer.quant_msb, layer.prec_out.bits,
                            layer.prec_out.signed)
        else:
            out[r] = _quant(conv_row(r), layer.quant_msb, layer.prec_out.bits,
                            layer.prec_out.signed)
    return out


class Runner:
    def __init__(self, cp: CompiledProgram,
                 images: Optional[dict] = None,
                 trace_path: Optional[str] = None):
        self.cp = cp
        self.machine = Machine(act_depth=cp.ram.act_depth,
                               wgt_rows=cp.ram.wgt_rows,
                               scaler_depth=cp.ram.scaler_depth,
                               bias_depth=cp.ram.bias_depth)
        self.images = images  # {(kind, mvu, lap): values}; None = from plans
        img = assemble(cp.asm_source)
        self.machine.cpu.load_iram(img.words)
        self._load_lap(0)
        # Expected jobs per MVU, in program order.
        self.expected: dict[int, list[tuple[int, object]]] = {
            m: [] for m in range(8)}
        for ll in cp.lowered:
            for ph in ll.phases:
                for job in ph.jobs:
                    self.expected[ph.mvu].append((ll.index, job))
        self.progress = {m: 0 for m in range(8)}
        self.remaining = [sum(len(ph.jobs) for ph in ll.phases)
                          for ll in cp.lowered]
        self.layer_mvp_cycles = [0] * len(cp.lowered)
        self.logical: dict[int, np.ndarray] = {}
        self.host_outputs: dict[int, dict[int, np.ndarray]] = {}
        self.done_layers = 0
        self.machine.on_job_done.append(self._job_done)
        self._trace_file = open(trace_path, "w") if trace_path else None
        if self._trace_file:
            from .asm import disassemble_word
            def hook(cycle, ret):
                self._trace_file.write(
                    f"{cycle} {ret.hart} {ret.pc:08x} "
                    f"{disassemble_word(ret.word, ret.pc)}\n")
            self.machine.trace_hook = hook

    # Image loading -----------------------------------------------------------

    def _image(self, kind: str, mvu: int, ll: LoweredLayer):
        if self.images is not None and (kind, mvu, ll.lap) in self.images:
            return self.images[(kind, mvu, ll.lap)]
        return {"weights": ll.weight_words, "scaler": ll.scaler_vals,
                "bias": ll.bias_vals}[kind]

    def _load_lap(self, lap: int) -> None:
        for ll in self.cp.lowered:
            if ll.lap != lap:
                continue
            for m in ll.mvus:
                self.machine.load_weight_image(m, self._image("weights", m, ll))
                self.machine.load_scaler_image(m, self._image("scaler", m, ll))
                self.machine.load_bias_image(m, self._image("bias", m, ll))

    # Input placement ----------------------------------------------------------

    def place_input(self, values: list[int]) -> None:
        model = self.cp.model
        n, h, w, c = model.input_shape
        prec = model.layers[0].prec_a
        x = np.asarray(values, dtype=np.int64).reshape(h, w, c)
        for v in values:
            if not prec.contains(int(v)):
                raise VerificationError(f"input value {v} outside {prec}")
        tensor = x.tolist()
        for m, lay in self.cp.input_layouts.items():
            rows = list(range(lay.row0, lay.row0 + lay.rows))
            place_rows(self.machine.mvus[m].mem.act, lay, tensor, prec,
                       rows, w, c)
        self.logical[0] = x

    # Event handling -----------------------------------------------------------

    def _job_done(self, done: JobDone) -> None:
        idx = self.progress[done.mvu]
        if idx >= len(self.expected[done.mvu]):
            raise VerificationError(
                f"MVU {done.mvu} completed an unscheduled job")
        layer_idx, expect = self.expected[done.mvu][idx]
        if done.descriptor != expect:
            raise VerificationError(
                f"MVU {done.mvu} job {idx}: descriptor differs from schedule:\n"
                f"got      {done.descriptor.to_json()}\n"
                f"expected {expect.to_json()}")
        self.progress[done.mvu] = idx + 1
        self.remaining[layer_idx] -= 1
        self.layer_mvp_cycles[layer_idx] += done.cycles
        if self.remaining[layer_idx] == 0:
            self._layer_complete(self.cp.lowered[layer_idx])

    def _layer_complete(self, ll: LoweredLayer) -> None:
        layer = ll.layer
        x = self.logical[ll.index]
        host = _host_conv_rows(layer, x, ll.host_rows) if ll.host_rows else {}
        self.host_outputs[ll.index] = host

        _, oh, ow, oc = layer.output_shape
        if self.cp.mode == "pipelined":
            target = ll.out_targets[0]
            self._dma_host_rows(target, layer, host)
            self._zero_pad_cols(target, layer)
            out = read_rows(self.machine.mvus[target.mvu].mem.act,
                            target.layout, layer.prec_out,
                            list(range(oh)), ow, oc)
            self.logical[ll.index + 1] = np.asarray(out, dtype=np.int64)
        else:
            rows_acc = np.zeros((oh, ow, oc), dtype=np.int64)
            for t in ll.out_targets:
                mvu_rows = [r for r in t.rows if r not in host]
                if layer.kind in ("gemm", "gemv"):
                    if t.rows:  # t.rows are output tile indices here
                        vals = read_rows(self.machine.mvus[t.mvu].mem.act,
                                         t.layout, layer.prec_out, [0], 1, oc)
                        arr = np.asarray(vals[0][0], dtype=np.int64)
                        for ts in t.rows:
                            lo, hi = ts * LANES, min((ts + 1) * LANES, oc)
                            rows_acc[0, 0, lo:hi] = arr[lo:hi]
                elif mvu_rows:
                    vals = read_rows(self.machine.mvus[t.mvu].mem.act,
                                     t.layout, layer.prec_out, mvu_rows, ow, oc)
                    for r, vrow in zip(mvu_rows, vals):
                        rows_acc[r] = vrow
            for r, vals in host.items():
                rows_acc[r] = vals
            self.logical[ll.index + 1] = rows_acc
            nxt = (self.cp.lowered[ll.index + 1]
                   if ll.index + 1 < len(self.cp.lowered) else None)
            if nxt is not None:
                self._redistribute(nxt, rows_acc)

        if ll.index + 1 < len(self.cp.lowered):
            nxt = self.cp.lowered[ll.index + 1]
            if nxt.lap != ll.lap:
                self._load_lap(nxt.lap)
        self.done_layers += 1

    def _dma_host_rows(self, target: OutTarget, layer: LayerIR,
                       host: dict[int, np.ndarray]) -> None:
        if not host:
            return
        _, _, ow, oc = layer.output_shape
        mem = self.machine.mvus[target.mvu].mem.act
        rows = sorted(host)
        tensor = _DictTensor({r: host[r].tolist() for r in rows})
        place_rows(mem, target.layout, tensor, layer.prec_out, rows, ow, oc)

    def _zero_pad_cols(self, target: OutTarget, layer: LayerIR) -> None:
        lay = target.layout
        if lay.pad == 0:
            return
        mem = self.machine.mvus[target.mvu].mem.act
        pad_cols = list(range(lay.pad)) + \
            list(range(lay.cols - lay.pad, lay.cols))
        for r in range(lay.rows):
            for col_s in pad_cols:
                for cb in range(lay.c_blocks):
                    a = lay.addr(r + lay.row0, col_s, cb)
                    for p in range(lay.bits):
                        mem[a + p] = 0

    def _redistribute(self, nxt: LoweredLayer, full: np.ndarray) -> None:
        layer = nxt.layer
        _, h, w, c = layer.input_shape
        tensor = full.tolist()
        for m, lay in nxt.in_layouts.items():
            rows = list(range(lay.row0, lay.row0 + lay.rows))
            place_rows(self.machine.mvus[m].mem.act, lay, tensor,
                       layer.prec_a, rows, w, c)

    # Main loop ----------------------------------------------------------------

    def run(self, max_cycles: Optional[int] = None) -> SimResult:
        total_jobs = sum(self.remaining)
        if max_cycles is None:
            max_cycles = 16 * self.cp.total_cycles + 4000 * total_jobs + 200000
        n_layers = len(self.cp.lowered)
        while self.done_layers < n_layers:
            self.machine.step()
            if self.machine.cycle > max_cycles:
                raise SimError(
                    f"simulation exceeded {max_cycles} cycles "
                    f"({self.done_layers}/{n_layers} layers done)")
        for ll, counted in zip(self.cp.lowered, self.layer_mvp_cycles):
            if counted != ll.cycles:
                raise VerificationError(
                    f"{ll.layer.name}: counted {counted} MVP cycles, "
                    f"schedule says {ll.cycles}")
        if self._trace_file:
            self._trace_file.close()
        last = self.cp.model.layers[-1]
        out = self.logical[n_layers]
        return SimResult(
            output_shape=tuple(last.output_shape),
            output_values=[int(v) for v in out.reshape(-1)],
            layer_cycles=[(ll.layer.name, cyc) for ll, cyc in
                          zip(self.cp.lowered, self.layer_mvp_cycles)],
            total_cycles=sum(self.layer_mvp_cycles),
            machine_cycles=self.machine.cycle)


class _DictTensor:
    """Row-indexable view over a sparse {row: [[col][ch]]} mapping."""

    def __init__(self, rows: dict[int, list]):
        self.rows = rows

    def __getitem__(self, r: int):
        return self.rows[r]


def simulate(cp: CompiledProgram, input_values: list[int],
             images: Optional[dict] = None,
             trace_path: Optional[str] = None) -> SimResult:
    runner = Runner(cp, images=images, trace_path=trace_path)
    runner.place_input(input_values)
    return runner.run()
