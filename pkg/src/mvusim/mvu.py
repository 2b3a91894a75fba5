"""Functional and cycle-counted model of one matrix-vector unit.

An MVU couples four RAMs (activations, weights, scalers, biases) to a
64-lane bit-serial matrix-vector product array and a post-processing
pipeline (scale/bias, max-pool/ReLU, quantize/serialize).  Address
generators walk the RAMs as nested loops with fixed per-level jumps; the
MVP's own microsequencer iterates the b_a*b_w bit-position pairs for every
(activation block, weight tile) the generators visit, so one visit costs
exactly b_a*b_w cycles.

Jobs are described by :class:`JobDescriptor`, the exact state a controller
programs through CSRs.  :class:`JobRuntime` executes a job one MVP cycle at
a time so the machine model can interleave it with the controller and the
interconnect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .bitserial import MASK64, Precision, flat_schedule, pack_lanes

ACT_DEPTH_DEFAULT = 1 << 15     # 64-bit words
WGT_ROWS_DEFAULT = 1 << 11      # 4096-bit rows (64 words each)
SCALER_DEPTH_DEFAULT = 1 << 13  # 16-bit words
BIAS_DEPTH_DEFAULT = 1 << 13    # 32-bit words

MVP_OUT_BITS = 27   # scaler multiplier input width
SCALE_BITS = 16     # scaler multiplier operand width
BIAS_BITS = 32
QUANT_IN_BITS = 32  # quantizer input width

LANES = 64


class SimError(Exception):
    """Base class for simulator errors."""


class AddressOutOfRange(SimError):
    def __init__(self, addr: int, depth: int, ram: str = "ram"):
        super().__init__(f"{ram} address {addr} out of range (depth {depth})")
        self.addr = addr
        self.depth = depth


class PrecisionMismatch(SimError):
    pass


class MvpOverflow(SimError):
    pass


class PipelineOverflow(SimError):
    pass


class BadWindow(SimError):
    pass


class BadQuantWindow(SimError):
    pass


class JobInvalid(SimError):
    pass


@dataclass
class MvuMemories:
    """The four RAMs of one MVU.

    Weight rows are 4096 bits, held as 64 consecutive 64-bit words; word
    ``64*row + lane_row`` is the lane mask feeding VVP ``lane_row``.
    """

    act: list[int]
    wgt: list[int]
    scaler: list[int]
    bias: list[int]

    @classmethod
    def create(cls, act_depth: int = ACT_DEPTH_DEFAULT,
               wgt_rows: int = WGT_ROWS_DEFAULT,
               scaler_depth: int = SCALER_DEPTH_DEFAULT,
               bias_depth: int = BIAS_DEPTH_DEFAULT) -> "MvuMemories":
        return cls(act=[0] * act_depth, wgt=[0] * (wgt_rows * 64),
                   scaler=[0] * scaler_depth, bias=[0] * bias_depth)

    @property
    def act_depth(self) -> int:
        return len(self.act)

    @property
    def wgt_row_depth(self) -> int:
        return len(self.wgt) // 64

    def wgt_row_word(self, row: int, lane_row: int) -> int:
        return self.wgt[row * 64 + lane_row]


@dataclass(frozen=True)
class AguConfig:
    """Nested-loop address generator: innermost level first.

    After each emitted address the jump of the innermost level whose
    counter does not wrap is applied; the sequence length is the product
    of the loop counts.
    """

    loop_counts: tuple[int, ...]
    loop_jumps: tuple[int, ...]
    base: int = 0

    def __post_init__(self):
        if not 1 <= len(self.loop_counts) <= 5:
            raise JobInvalid(f"1..5 loop levels required, got {len(self.loop_counts)}")
        if len(self.loop_jumps) != len(self.loop_counts):
            raise JobInvalid("loop_jumps length must match loop_counts")
        if any(c < 1 for c in self.loop_counts):
            raise JobInvalid(f"loop counts must be >= 1, got {self.loop_counts}")

    @property
    def total(self) -> int:
        n = 1
        for c in self.loop_counts:
            n *= c
        return n


def agu_sequence(cfg: AguConfig, depth: Optional[int] = None,
                 ram: str = "ram") -> list[int]:
    """Generate the full word-address sequence of an address generator."""
    addrs = []
    addr = cfg.base
    counters = [0] * len(cfg.loop_counts)
    for step in range(cfg.total):
        if depth is not None and not 0 <= addr < depth:
            raise AddressOutOfRange(addr, depth, ram)
        addrs.append(addr)
        if step == cfg.total - 1:
            break
        for lvl in range(len(cfg.loop_counts)):
            counters[lvl] += 1
            if counters[lvl] < cfg.loop_counts[lvl]:
                addr += cfg.loop_jumps[lvl]
                break
            counters[lvl] = 0
    return addrs


@dataclass(frozen=True)
class JobDescriptor:
    """Complete CSR-programmable state of one MVU job."""

    prec_a: Precision
    prec_w: Precision
    agu_act: AguConfig
    agu_wgt: AguConfig
    agu_scaler: AguConfig
    agu_bias: AguConfig
    agu_out: AguConfig
    countdown: int
    scaler_enable: bool = False
    pool_window: int = 1
    relu_enable: bool = False
    quant_msb: int = 31
    quant_bits: int = 32
    dest_mask: int = 0
    dest_base: int = 0

    def to_json_dict(self) -> dict:
        def agu(a):
            return {"counts": list(a.loop_counts), "jumps": list(a.loop_jumps),
                    "base": a.base}
        return {
            "prec_a": {"bits": self.prec_a.bits, "signed": self.prec_a.signed},
            "prec_w": {"bits": self.prec_w.bits, "signed": self.prec_w.signed},
            "agu_act": agu(self.agu_act), "agu_wgt": agu(self.agu_wgt),
            "agu_scaler": agu(self.agu_scaler), "agu_bias": agu(self.agu_bias),
            "agu_out": agu(self.agu_out), "countdown": self.countdown,
            "scaler_enable": self.scaler_enable, "pool_window": self.pool_window,
            "relu_enable": self.relu_enable, "quant_msb": self.quant_msb,
            "quant_bits": self.quant_bits, "dest_mask": self.dest_mask,
            "dest_base": self.dest_base,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "JobDescriptor":
        def agu(a):
            return AguConfig(tuple(a["counts"]), tuple(a["jumps"]), a["base"])
        return cls(
            prec_a=Precision(d["prec_a"]["bits"], d["prec_a"]["signed"]),
            prec_w=Precision(d["prec_w"]["bits"], d["prec_w"]["signed"]),
            agu_act=agu(d["agu_act"]), agu_wgt=agu(d["agu_wgt"]),
            agu_scaler=agu(d["agu_scaler"]), agu_bias=agu(d["agu_bias"]),
            agu_out=agu(d["agu_out"]), countdown=d["countdown"],
            scaler_enable=d["scaler_enable"], pool_window=d["pool_window"],
            relu_enable=d["relu_enable"], quant_msb=d["quant_msb"],
            quant_bits=d["quant_bits"], dest_mask=d["dest_mask"],
            dest_base=d["dest_base"])


def scaler_apply(v: int, scale: int, bias: int) -> int:
    """Exact v*scale + bias through the asymmetric 27x16 multiplier."""
    if not -(1 << (MVP_OUT_BITS - 1)) <= v < (1 << (MVP_OUT_BITS - 1)):
        raise MvpOverflow(f"MVP result {v} exceeds {MVP_OUT_BITS}-bit signed range")
    if not 0 <= scale < (1 << SCALE_BITS):
        raise PipelineOverflow(f"scale {scale} exceeds {SCALE_BITS}-bit unsigned range")
    if not -(1 << (BIAS_BITS - 1)) <= bias < (1 << (BIAS_BITS - 1)):
        raise PipelineOverflow(f"bias {bias} exceeds {BIAS_BITS}-bit signed range")
    return v * scale + bias


def pool_relu(stream: Sequence[int], window: int, relu: bool) -> list[int]:
    """Window-max over a stream via a single comparator register.

    With ReLU the register initializes to 0 at each window start, so the
    output is max(0, window max); without it the first element seeds the
    register.
    """
    if window < 1:
        raise BadWindow(f"window must be >= 1, got {window}")
    if len(stream) % window:
        raise BadWindow(f"stream length {len(stream)} not divisible by window {window}")
    out = []
    for base in range(0, len(stream), window):
        reg = 0 if relu else stream[base]
        for v in stream[base:base + window]:
            if v > reg:
                reg = v
        out.append(reg)
    return out


def quantser(v: int, msb_position: int, out_bits: int) -> list[int]:
    """Select bits [msb_position .. msb_position-out_bits+1] of v, MSB first."""
    if not 0 <= msb_position < QUANT_IN_BITS:
        raise BadQuantWindow(f"msb_position {msb_position} outside 0..{QUANT_IN_BITS - 1}")
    if not 1 <= out_bits <= msb_position + 1:
        raise BadQuantWindow(f"out_bits {out_bits} outside 1..msb_position+1")
    if not -(1 << (QUANT_IN_BITS - 1)) <= v < (1 << (QUANT_IN_BITS - 1)):
        raise PipelineOverflow(f"quantizer input {v} exceeds {QUANT_IN_BITS}-bit signed range")
    return [(v >> p) & 1 for p in range(msb_position, msb_position - out_bits, -1)]


@dataclass(frozen=True)
class WritebackWord:
    """One serialized 64-lane output word bound for activation RAM."""

    dest_mask: int
    addr: int
    word: int


class JobRuntime:
    """Steps one job through the MVP and pipeline, one cycle per bit pair."""

    def __init__(self, mem: MvuMemories, job: JobDescriptor):
        self.mem = mem
        self.job = job
        ba, bw = job.prec_a.bits, job.prec_w.bits

        self.act_addrs = agu_sequence(job.agu_act, ram="activation")
        self.wgt_addrs = agu_sequence(job.agu_wgt, ram="weight")
        if len(self.act_addrs) != len(self.wgt_addrs):
            raise JobInvalid(
                f"activation AGU emits {len(self.act_addrs)} visits, "
                f"weight AGU {len(self.wgt_addrs)}")
        self.n_visits = len(self.act_addrs)

        self.pairs = flat_schedule(ba, bw)
        if job.countdown != len(self.pairs) * self.n_visits:
            raise JobInvalid(
                f"countdown {job.countdown} != {ba}*{bw}*{self.n_visits} visits")

        n_writebacks = job.agu_out.total
        if job.pool_window < 1:
            raise BadWindow(f"pool window must be >= 1, got {job.pool_window}")
        self.n_flushes = n_writebacks * job.pool_window
        if self.n_visits % self.n_flushes:
            raise JobInvalid(
                f"{self.n_visits} visits not divisible into {self.n_flushes} flushes")
        self.blocks_per_flush = self.n_visits // self.n_flushes

        # Plane-stride consistency: block-stepping loops must stride whole
        # blocks of the configured bit depth.
        for cfg, bits, name in ((job.agu_act, ba, "activation"),
                                (job.agu_wgt, bw, "weight")):
            if cfg.loop_counts[0] > 1 and cfg.loop_jumps[0] % bits:
                raise PrecisionMismatch(
                    f"{name} AGU innermost jump {cfg.loop_jumps[0]} "
                    f"is not a multiple of the {bits}-bit block depth")

        for a in self.act_addrs:
            if not 0 <= a <= mem.act_depth - ba:
                raise AddressOutOfRange(a, mem.act_depth, "activation")
        for a in self.wgt_addrs:
            if not 0 <= a <= mem.wgt_row_depth - bw:
                raise AddressOutOfRange(a, mem.wgt_row_depth, "weight")

        if job.scaler_enable:
            self.scaler_addrs = agu_sequence(job.agu_scaler, ram="scaler")
            self.bias_addrs = agu_sequence(job.agu_bias, ram="bias")
            if len(self.scaler_addrs) != self.n_flushes or \
                    len(self.bias_addrs) != self.n_flushes:
                raise JobInvalid("scaler/bias AGU length must equal flush count")
            for a in self.scaler_addrs:
                if not 0 <= a <= len(mem.scaler) - LANES:
                    raise AddressOutOfRange(a, len(mem.scaler), "scaler")
            for a in self.bias_addrs:
                if not 0 <= a <= len(mem.bias) - LANES:
                    raise AddressOutOfRange(a, len(mem.bias), "bias")
        else:
            self.scaler_addrs = self.bias_addrs = None

        quantser(0, job.quant_msb, job.quant_bits)  # window validation
        self.out_addrs = agu_sequence(job.agu_out, ram="output")
        if job.dest_mask == 0 or job.dest_mask > 0xFF:
            raise JobInvalid(f"destination mask {job.dest_mask:#x} invalid")

        self._visit = 0
        self._pair = 0
        self._pass_acc = [0] * LANES
        self._out_acc = [0] * LANES
        self._flush = 0
        self._wb = 0
        self._pool_regs: Optional[list[int]] = None
        self._pool_count = 0
        self.cycles = 0
        self.raw_flushes: list[list[int]] = []

    @property
    def mvp_done(self) -> bool:
        return self._visit >= self.n_visits

    def step(self) -> list[WritebackWord]:
        """Advance one MVP cycle; returns writeback words emitted by it."""
        if self.mvp_done:
            raise SimError("job already complete")
        j, k, shift_after = self.pairs[self._pair]
        ba, bw = self.job.prec_a.bits, self.job.prec_w.bits
        act_word = self.mem.act[self.act_addrs[self._visit] + (ba - j)]
        row = self.wgt_addrs[self._visit] + (bw - k)
        row_words = self.mem.wgt[row * 64:(row + 1) * 64]
        negate = (self.job.prec_a.signed and j == ba) != \
                 (self.job.prec_w.signed and k == bw)
        acc = self._pass_acc
        if negate:
            for lane in range(LANES):
                acc[lane] -= (act_word & row_words[lane] & MASK64).bit_count()
        else:
            for lane in range(LANES):
                acc[lane] += (act_word & row_words[lane] & MASK64).bit_count()
        if shift_after:
            for lane in range(LANES):
                acc[lane] <<= 1
        self.cycles += 1
        self._pair += 1
        emitted: list[WritebackWord] = []
        if self._pair == len(self.pairs):
            self._pair = 0
            out = self._out_acc
            for lane in range(LANES):
                out[lane] += acc[lane]
                acc[lane] = 0
            self._visit += 1
            if self._visit % self.blocks_per_flush == 0:
                emitted = self._flush_outputs()
        return emitted

    def _flush_outputs(self) -> list[WritebackWord]:
        raw = list(self._out_acc)
        self._out_acc = [0] * LANES
        self.raw_flushes.append(raw)
        vals = raw
        if self.job.scaler_enable:
            sbase = self.scaler_addrs[self._flush]
            bbase = self.bias_addrs[self._flush]
            vals = [scaler_apply(v, self.mem.scaler[sbase + lane],
                                 self.mem.bias[bbase + lane])
                    for lane, v in enumerate(vals)]
        if self._pool_regs is None:
            self._pool_regs = [max(0, v) if self.job.relu_enable else v for v in vals]
        else:
            regs = self._pool_regs
            for lane, v in enumerate(vals):
                if v > regs[lane]:
                    regs[lane] = v
        self._pool_count += 1
        self._flush += 1
        if self._pool_count < self.job.pool_window:
            return []
        final = self._pool_regs
        self._pool_regs = None
        self._pool_count = 0
        bit_rows = [quantser(v, self.job.quant_msb, self.job.quant_bits)
                    for v in final]
        base = self.job.dest_base + self.out_addrs[self._wb]
        self._wb += 1
        return [WritebackWord(self.job.dest_mask, base + plane,
                              pack_lanes(bit_rows[lane][plane] for lane in range(LANES)))
                for plane in range(self.job.quant_bits)]


def run_mvp_job(mem: MvuMemories, job: JobDescriptor) -> tuple[list[list[int]], int]:
    """Run a job to completion; returns raw per-flush MVP outputs and cycles.

    Raw outputs are the 64 shifter-accumulator values before the pipeline
    stages, i.e. the exact bit-serial dot products of the visited blocks.
    Pipeline writeback words are produced but discarded; use a
    :class:`JobRuntime` (or the machine model) to capture them.
    """
    rt = JobRuntime(mem, job)
    while not rt.mvp_done:
        rt.step()
    return rt.raw_flushes, rt.cycles


@dataclass(frozen=True)
class InterconnectPacket:
    source_mvu: int
    dest_mask: int
    dest_address: int
    word: int


@dataclass(frozen=True)
class AppliedWrite:
    mvu: int
    addr: int
    word: int
    source: str  # "interconnect:<src>", "controller", "local"


def interconnect_cycle(
    pending: Sequence[InterconnectPacket],
    controller_writes: Sequence[tuple[int, int, int]],
    local_writes: Sequence[tuple[int, int, int]],
) -> tuple[list[AppliedWrite], list[InterconnectPacket],
           list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    """One arbitration round over the eight activation-RAM write ports.

    Per destination, an interconnect packet beats a controller write beats
    the MVU's own writeback; among packets the lowest source index wins.
    Losers are returned for retry next cycle.  A broadcast packet lands at
    every destination it wins this cycle and retries the rest.
    """
    applied: list[AppliedWrite] = []
    port_taken = [False] * 8

    winners: dict[int, int] = {}  # dest -> index into pending
    for dest in range(8):
        best = None
        for idx, pkt in enumerate(pending):
            if pkt.dest_mask >> dest & 1 and \
                    (best is None or pkt.source_mvu < pending[best].source_mvu):
                best = idx
        if best is not None:
            winners[dest] = best
            port_taken[dest] = True

    remaining_packets: list[InterconnectPacket] = []
    for idx, pkt in enumerate(pending):
        won_mask = 0
        for dest, widx in winners.items():
            if widx == idx:
                applied.append(AppliedWrite(dest, pkt.dest_address, pkt.word,
                                            f"interconnect:{pkt.source_mvu}"))
                won_mask |= 1 << dest
        rest = pkt.dest_mask & ~won_mask
        if rest:
            remaining_packets.append(replace(pkt, dest_mask=rest))

    remaining_controller: list[tuple[int, int, int]] = []
    for cw in controller_writes:
        dest, addr, word = cw
        if not port_taken[dest]:
            applied.append(AppliedWrite(dest, addr, word, "controller"))
            port_taken[dest] = True
        else:
            remaining_controller.append(cw)

    remaining_local: list[tuple[int, int, int]] = []
    for lw in local_writes:
        mvu, addr, word = lw
        if not port_taken[mvu]:
            applied.append(AppliedWrite(mvu, addr, word, "local"))
            port_taken[mvu] = True
        else:
            remaining_local.append(lw)

    return applied, remaining_packets, remaining_controller, remaining_local
