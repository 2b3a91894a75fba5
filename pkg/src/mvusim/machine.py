"""The full machine: 8 MVUs, the barrel controller, and the interconnect.

One :meth:`Machine.step` is one clock: the rotating hart retires an
instruction, every busy MVU advances one MVP cycle, and the write-port
arbiter applies at most one activation-RAM write per destination
(interconnect > controller > local writeback).  A job raises its done
interrupt only after its last writeback word has landed.

Host DMA (initial images, edge-row fills, lap weight reloads) writes RAM
directly between clocks; it models the host's bulk access path, not the
cycle-arbitrated ports.

A machine is single-writer: all mutation happens on the thread calling
:meth:`Machine.step`.  Distinct machines run in parallel freely; read-only
snapshots of a stopped machine may be shared.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .barrel import HARTS, BarrelCpu, MvuPort, Retirement
from .mvu import (
    InterconnectPacket,
    JobDescriptor,
    JobRuntime,
    MvuMemories,
    SimError,
    interconnect_cycle,
)


@dataclass
class JobDone:
    mvu: int
    descriptor: JobDescriptor
    cycles: int
    finished_at: int


class MvuState:
    def __init__(self, mem: MvuMemories):
        self.mem = mem
        self.active: Optional[JobRuntime] = None
        self.queued: Optional[JobDescriptor] = None
        self.irq_pending = False
        self.packet_queue: deque[InterconnectPacket] = deque()
        self.local_queue: deque[tuple[int, int, int]] = deque()
        self.outstanding = 0
        self.mvp_cycles = 0
        self.jobs_done = 0


class Machine(MvuPort):
    def __init__(self, act_depth=None, wgt_rows=None, scaler_depth=None,
                 bias_depth=None):
        kwargs = {}
        if act_depth is not None:
            kwargs["act_depth"] = act_depth
        if wgt_rows is not None:
            kwargs["wgt_rows"] = wgt_rows
        if scaler_depth is not None:
            kwargs["scaler_depth"] = scaler_depth
        if bias_depth is not None:
            kwargs["bias_depth"] = bias_depth
        self.mvus = [MvuState(MvuMemories.create(**kwargs)) for _ in range(HARTS)]
        self.cpu = BarrelCpu(port=self)
        from .asm import assemble
        self.cpu.load_iram(assemble("").words)  # park all harts by default
        self.controller_queue: deque[tuple[int, int, int]] = deque()
        self.cycle = 0
        self.on_job_done: list[Callable[[JobDone], None]] = []
        self.trace_hook: Optional[Callable[[int, Retirement], None]] = None

    # MvuPort ----------------------------------------------------------------

    def start_job(self, hart: int, desc: JobDescriptor) -> None:
        st = self.mvus[hart]
        if st.active is None and st.outstanding == 0:
            st.active = JobRuntime(st.mem, desc)
        elif st.queued is None:
            st.queued = desc
        else:
            raise SimError(f"MVU {hart}: job started while one is queued")

    def busy_bits(self, hart: int) -> int:
        st = self.mvus[hart]
        return (1 if st.active or st.outstanding else 0) | \
               (2 if st.queued else 0)

    def irq_pending(self, hart: int) -> bool:
        return self.mvus[hart].irq_pending

    def irq_clear(self, hart: int) -> None:
        self.mvus[hart].irq_pending = False

    # Clock ------------------------------------------------------------------

    def step(self) -> Retirement:
        hart = self.cycle % HARTS
        retirement = self.cpu.step_hart(hart)
        if self.trace_hook:
            self.trace_hook(self.cycle, retirement)

        for m, st in enumerate(self.mvus):
            if st.active is None and st.queued is not None and st.outstanding == 0:
                st.active = JobRuntime(st.mem, st.queued)
                st.queued = None
            rt = st.active
            if rt is None or rt.mvp_done:
                continue
            for wb in rt.step():
                others = wb.dest_mask & ~(1 << m) & 0xFF
                if others:
                    st.packet_queue.append(
                        InterconnectPacket(m, others, wb.addr, wb.word))
                    st.outstanding += 1
                if wb.dest_mask >> m & 1:
                    st.local_queue.append((m, wb.addr, wb.word))
                    st.outstanding += 1
            st.mvp_cycles += 1

        self._arbitrate()

        for m, st in enumerate(self.mvus):
            rt = st.active
            if rt is not None and rt.mvp_done and st.outstanding == 0:
                st.active = None
                st.irq_pending = True
                st.jobs_done += 1
                done = JobDone(m, rt.job, rt.cycles, self.cycle)
                for cb in self.on_job_done:
                    cb(done)

        self.cycle += 1
        return retirement

    def _arbitrate(self) -> None:
        packets = [st.packet_queue[0] for st in self.mvus if st.packet_queue]
        ctrl = [self.controller_queue[0]] if self.controller_queue else []
        locals_ = [st.local_queue[0] for st in self.mvus if st.local_queue]
        if not packets and not ctrl and not locals_:
            return
        applied, rem_pkts, rem_ctrl, rem_local = interconnect_cycle(
            packets, ctrl, locals_)
        for w in applied:
            ram = self.mvus[w.mvu].mem.act
            if not 0 <= w.addr < len(ram):
                raise SimError(f"writeback address {w.addr} out of range "
                               f"(MVU {w.mvu})")
            ram[w.addr] = w.word
        rem_by_src = {p.source_mvu: p for p in rem_pkts}
        for m, st in enumerate(self.mvus):
            if st.packet_queue:
                if m in rem_by_src:
                    st.packet_queue[0] = rem_by_src[m]
                else:
                    st.packet_queue.popleft()
                    st.outstanding -= 1
        if ctrl and not rem_ctrl:
            self.controller_queue.popleft()
        applied_local = {(w.mvu, w.addr, w.word)
                         for w in applied if w.source == "local"}
        for st in self.mvus:
            if st.local_queue and st.local_queue[0] in applied_local:
                st.local_queue.popleft()
                st.outstanding -= 1

    def run(self, cycles: int) -> None:
        for _ in range(cycles):
            self.step()

    # Host DMA ---------------------------------------------------------------

    def dma_act_words(self, mvu: int, words: dict[int, int]) -> None:
        ram = self.mvus[mvu].mem.act
        for addr, word in words.items():
            ram[addr] = word

    def load_weight_image(self, mvu: int, words: list[int]) -> None:
        mem = self.mvus[mvu].mem
        if len(words) > len(mem.wgt):
            raise SimError(f"weight image ({len(words)} words) exceeds RAM")
        mem.wgt[:len(words)] = words
        for i in range(len(words), len(mem.wgt)):
            mem.wgt[i] = 0

    def load_scaler_image(self, mvu: int, values: list[int]) -> None:
        mem = self.mvus[mvu].mem
        mem.scaler[:len(values)] = values

    def load_bias_image(self, mvu: int, values: list[int]) -> None:
        mem = self.mvus[mvu].mem
        mem.bias[:len(values)] = values


def deliver_interrupt(machine: Machine, mvu_id: int) -> None:
    """Raise the done-pending bit for hart ``mvu_id`` (test hook)."""
    machine.mvus[mvu_id].irq_pending = True
