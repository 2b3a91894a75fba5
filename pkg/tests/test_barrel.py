import random

import pytest

from mvusim import csrdefs as csr
from mvusim.asm import assemble
from mvusim.barrel import (
    DRAM_BASE,
    HART_IRAM_WORDS,
    BarrelCpu,
    IllegalInstruction,
    MisalignedAccess,
    MvuPort,
    UnknownCsr,
)
from mvusim.bitserial import Precision
from mvusim.mvu import AguConfig, JobDescriptor

from rv32_ref import RefCpu


class RecordingPort(MvuPort):
    def __init__(self):
        self.started = []
        self.pending = [False] * 8
        self.busy = [0] * 8

    def start_job(self, hart, desc):
        self.started.append((hart, desc))

    def busy_bits(self, hart):
        return self.busy[hart]

    def irq_pending(self, hart):
        return self.pending[hart]

    def irq_clear(self, hart):
        self.pending[hart] = False


def run_barrel(cpu, cycles):
    for c in range(cycles):
        cpu.step_hart(c % 8)


def load_hart0(cpu, words):
    cpu.load_iram(words, base_word=0)


def random_program(rng, n_instr):
    # Straight-line arithmetic/logic plus aligned data-RAM traffic and short
    # forward branches; well-defined on both interpreters.
    words = []
    # li x10, DRAM_BASE  (lui only: 0x10000 = 0x10 << 12)
    words.append((0x10 << 12) | (10 << 7) | 0x37)
    opi = [0, 2, 3, 4, 6, 7]
    opr = [(0, 0), (0, 0x20), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0),
           (5, 0x20), (6, 0), (7, 0)]
    while len(words) < n_instr:
        kind = rng.randrange(10)
        rd = rng.randrange(1, 10)
        rs1 = rng.randrange(0, 10)
        rs2 = rng.randrange(0, 10)
        if kind < 4:
            f3 = rng.choice(opi)
            imm = rng.randint(-2048, 2047)
            words.append(((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) |
                         (rd << 7) | 0x13)
        elif kind < 7:
            f3, f7 = rng.choice(opr)
            words.append((f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) |
                         (rd << 7) | 0x33)
        elif kind == 7:
            off = 4 * rng.randrange(0, 256, 4)
            f3 = rng.choice([0, 1, 2])  # sb/sh/sw
            size_align = {0: 1, 1: 2, 2: 4}[f3]
            off -= off % size_align
            words.append((((off >> 5) & 0x7F) << 25) | (rs2 << 20) |
                         (10 << 15) | (f3 << 12) | ((off & 0x1F) << 7) | 0x23)
        elif kind == 8:
            off = 4 * rng.randrange(0, 256, 4)
            f3 = rng.choice([0, 1, 2, 4, 5])
            size_align = {0: 1, 1: 2, 2: 4, 4: 1, 5: 2}[f3]
            off -= off % size_align
            words.append(((off & 0xFFF) << 20) | (10 << 15) | (f3 << 12) |
                         (rd << 7) | 0x03)
        else:
            skip = rng.randint(1, 3) * 4  # forward branch over real code
            f3 = rng.choice([0, 1, 4, 5, 6, 7])
            imm = skip + 4
            words.append((((imm >> 12) & 1) << 31) | (((imm >> 5) & 0x3F) << 25) |
                         (rs2 << 20) | (rs1 << 15) | (f3 << 12) |
                         (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) | 0x63)
            for _ in range(skip // 4):
                if len(words) < n_instr:
                    words.append(0x00000013)  # nop
    return words[:n_instr]


class TestConformance:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_programs_match_reference(self, seed):
        rng = random.Random(seed)
        n = 200
        words = random_program(rng, n)
        ref = RefCpu(words)
        ref.run(max_steps=n)

        cpu = BarrelCpu()
        load_hart0(cpu, words)
        steps = 0
        while cpu.pc[0] < n * 4 and steps < n:
            cpu.step_hart(0)
            steps += 1

        assert cpu.regs[0] == ref.regs
        for addr, val in ref.mem.items():
            assert cpu.dram[addr - DRAM_BASE] == val

    def test_directed_edges(self):
        src = """
        .hart 0
            li   x1, -1
            srai x2, x1, 4        # arithmetic shift keeps sign
            srli x3, x1, 28       # logical shift pulls zeros
            sltu x4, x0, x1       # 0 < 0xffffffff unsigned
            slt  x5, x1, x0       # -1 < 0 signed
            li   x6, 0x12345678
            li   x7, 0x10000
            sw   x6, 0(x7)
            lb   x8, 1(x7)        # sign-extended byte 0x56
            lhu  x9, 2(x7)        # zero-extended half 0x1234
            lh   x11, 0(x7)       # sign-extended half 0x5678
        end:
            j end
        """
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        run_barrel(cpu, 8 * 16)
        r = cpu.regs[0]
        assert r[2] == 0xFFFFFFFF
        assert r[3] == 0xF
        assert r[4] == 1 and r[5] == 1
        assert r[8] == 0x56 and r[9] == 0x1234 and r[11] == 0x5678

    def test_illegal_instruction(self):
        cpu = BarrelCpu()
        load_hart0(cpu, [0xFFFFFFFF])
        with pytest.raises(IllegalInstruction):
            cpu.step_hart(0)

    def test_misaligned_store(self):
        src = ".hart 0\nli x1, 0x10001\nsw x1, 0(x1)\n"
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        cpu.step_hart(0)
        cpu.step_hart(0)
        with pytest.raises(MisalignedAccess):
            cpu.step_hart(0)


class TestBarrelSemantics:
    def test_hart_isolation_addi(self):
        src = "\n".join(f".hart {h}\naddi x1, x0, {h * 3 + 1}\nend{h}: j end{h}"
                        for h in range(8))
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        run_barrel(cpu, 8)
        for h in range(8):
            assert cpu.regs[h][1] == h * 3 + 1

    def test_branch_turnaround_is_eight_cycles(self):
        # Hart 3 takes a branch; its next retirement is one full rotation later.
        src = """
        .hart 3
            j target
            addi x1, x0, 99
        target:
            addi x1, x0, 7
        end: j end
        """
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        ret_cycles = []
        for cyc in range(24):
            r = cpu.step_hart(cyc % 8)
            if r.hart == 3:
                ret_cycles.append(cyc)
        assert ret_cycles[:2] == [3, 11]
        assert cpu.regs[3][1] == 7

    def test_fairness_window(self):
        src = "\n".join(
            f".hart {h}\nloop{h}: addi x1, x1, 1\nandi x2, x1, 7\nbne x2, x0, loop{h}\nj loop{h}"
            for h in range(8))
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        run_barrel(cpu, 8 * 1000)
        assert cpu.retired == [1000] * 8

    def test_x0_stays_zero(self):
        src = ".hart 0\naddi x0, x0, 55\nsub x0, x0, x1\nend: j end\n"
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        run_barrel(cpu, 8 * 4)
        assert all(cpu.regs[h][0] == 0 for h in range(8))

    def test_shared_data_ram(self):
        src = """
        .hart 0
            li x1, 0x10000
            li x2, 1234
            sw x2, 64(x1)
        e0: j e0
        .hart 1
            li x1, 0x10000
        wait:
            lw x3, 64(x1)
            beqz x3, wait
        e1: j e1
        """
        cpu = BarrelCpu()
        cpu.load_iram(assemble(src).words)
        run_barrel(cpu, 8 * 8)
        assert cpu.regs[1][3] == 1234


def bank_descriptor():
    return JobDescriptor(
        prec_a=Precision(2), prec_w=Precision(2, signed=True),
        agu_act=AguConfig((2, 3), (2, -2), 16),
        agu_wgt=AguConfig((2, 3), (2, 2), 0),
        agu_scaler=AguConfig((3,), (64,), 0),
        agu_bias=AguConfig((3,), (64,), 0),
        agu_out=AguConfig((3,), (2,), 128),
        countdown=24, scaler_enable=True, pool_window=1, relu_enable=True,
        quant_msb=9, quant_bits=2, dest_mask=0b10, dest_base=4096)


class TestCsrInterface:
    def test_write_read_roundtrip(self):
        cpu = BarrelCpu(RecordingPort())
        cpu.csr_access(0, csr.MVU_PREC_A, "write", 2)
        assert cpu.csr_access(0, csr.MVU_PREC_A, "read") == 2

    def test_hart_isolation(self):
        cpu = BarrelCpu(RecordingPort())
        cpu.csr_access(0, csr.agu_csr(0, csr.AGU_ADDR_BASE), "write", 77)
        for addr in range(csr.MVU_BASE, csr.MVU_LAST + 1):
            assert cpu.csr_access(1, addr, "read") == 0

    def test_mhartid(self):
        cpu = BarrelCpu()
        assert cpu.csr_access(5, csr.MHARTID, "read") == 5

    def test_unknown_csr(self):
        cpu = BarrelCpu()
        with pytest.raises(UnknownCsr):
            cpu.csr_access(0, 0x7C0, "read")

    def test_descriptor_bijection(self):
        # Program every field through CSR writes; the snapshot must equal the
        # directly constructed descriptor.
        desc = bank_descriptor()
        port = RecordingPort()
        cpu = BarrelCpu(port)
        h = 4
        w = lambda a, v: cpu.csr_access(h, a, "write", v)
        w(csr.MVU_PREC_A, desc.prec_a.bits | (desc.prec_a.signed << 5))
        w(csr.MVU_PREC_W, desc.prec_w.bits | (desc.prec_w.signed << 5))
        for idx, cfg in enumerate([desc.agu_act, desc.agu_wgt, desc.agu_scaler,
                                   desc.agu_bias, desc.agu_out]):
            for lvl, (c, j) in enumerate(zip(cfg.loop_counts, cfg.loop_jumps)):
                w(csr.agu_csr(idx, csr.AGU_COUNT0 + lvl), c)
                w(csr.agu_csr(idx, csr.AGU_JUMP0 + lvl), j & 0xFFFFFFFF)
            w(csr.agu_csr(idx, csr.AGU_ADDR_BASE), cfg.base)
        w(csr.MVU_COUNTDOWN, desc.countdown)
        w(csr.MVU_SCALER_EN, int(desc.scaler_enable))
        w(csr.MVU_POOL_WINDOW, desc.pool_window)
        w(csr.MVU_RELU_EN, int(desc.relu_enable))
        w(csr.MVU_QUANT_MSB, desc.quant_msb)
        w(csr.MVU_QUANT_BITS, desc.quant_bits)
        w(csr.MVU_DEST_MASK, desc.dest_mask)
        w(csr.MVU_DEST_BASE, desc.dest_base)
        w(csr.MVU_JOB_START, 1)
        assert port.started == [(h, desc)]

    def test_reserved_csrs_read_zero(self):
        cpu = BarrelCpu()
        for addr in csr.MVU_RESERVED:
            cpu.csr_access(0, addr, "write", 0xDEAD)
            assert cpu.csr_access(0, addr, "read") == 0


class TestInterrupts:
    def test_polling_path(self):
        port = RecordingPort()
        cpu = BarrelCpu(port)
        assert cpu.csr_access(2, csr.MVU_IRQ_STATUS, "read") == 0
        port.pending[2] = True
        assert cpu.csr_access(2, csr.MVU_IRQ_STATUS, "read") == 1
        cpu.csr_access(2, csr.MVU_IRQ_STATUS, "write", 1)  # write-1-to-clear
        assert port.pending[2] is False
        assert cpu.csr_access(2, csr.MVU_IRQ_STATUS, "read") == 0

    def test_trap_on_next_turn(self):
        src = """
        .hart 0
            la   x5, handler
            csrrw x0, mtvec, x5
            li   x5, 0x10000      # enable the done interrupt
            csrrs x0, mie, x5
            csrrsi x0, mstatus, 8
        spin:
            addi x6, x6, 1
            j spin
        handler:
            addi x7, x0, 42
            csrrwi x0, mvustatus, 1
            mret
        """
        port = RecordingPort()
        cpu = BarrelCpu(port)
        img = assemble(src)
        cpu.load_iram(img.words)
        for cyc in range(8 * 6):
            cpu.step_hart(cyc % 8)
        assert cpu.regs[0][7] == 0
        port.pending[0] = True
        r = cpu.step_hart(0)
        assert r.trapped and r.pc == img.labels["handler"]
        assert cpu.regs[0][7] == 42
        for cyc in range(1, 8 * 4):
            cpu.step_hart(cyc % 8)
        assert port.pending[0] is False
        assert cpu.regs[0][6] > 0  # back in the spin loop after mret

    def test_disabled_interrupt_stays_pollable(self):
        port = RecordingPort()
        cpu = BarrelCpu(port)
        cpu.load_iram(assemble(".hart 0\nspin: j spin\n").words)
        port.pending[0] = True
        r = cpu.step_hart(0)
        assert not r.trapped
        assert cpu.csr_access(0, csr.MIP, "read") == csr.MIE_MVU_DONE
