"""Instruction-accurate 8-hart barrel RV32I core.

One hart retires exactly one instruction per clock in strict rotation
(hart id = cycle mod 8), which hides the five pipeline stages of the
modeled hardware completely: no hazards, no branch penalty, no forwarding.
Each hart owns its PC, register file and CSR context; instruction and data
RAM (8KB each, Harvard) are shared, with a per-hart convention of 256
instruction words and 256 data words apiece.

The 74 MVU CSRs stage a job descriptor per hart; writing the start CSR
snapshots the staged state and hands it to the attached MVU interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import csrdefs as csr
from .bitserial import Precision
from .mvu import AguConfig, JobDescriptor, JobInvalid, SimError

M32 = 0xFFFFFFFF

IRAM_BASE = 0x0000_0000
IRAM_BYTES = 8 * 1024
DRAM_BASE = 0x0001_0000
DRAM_BYTES = 8 * 1024
HARTS = 8
HART_IRAM_WORDS = IRAM_BYTES // 4 // HARTS  # 256
HART_RESET_STRIDE = HART_IRAM_WORDS * 4


class CpuError(SimError):
    pass


class IllegalInstruction(CpuError):
    def __init__(self, word: int, pc: int):
        super().__init__(f"illegal instruction {word:#010x} at pc {pc:#010x}")
        self.word = word
        self.pc = pc


class MisalignedAccess(CpuError):
    def __init__(self, addr: int, what: str = "access"):
        super().__init__(f"misaligned {what} at {addr:#010x}")
        self.addr = addr


class UnknownCsr(CpuError):
    def __init__(self, addr: int):
        super().__init__(f"unknown CSR {addr:#05x}")
        self.addr = addr


def _s32(v: int) -> int:
    v &= M32
    return v - 0x100000000 if v & 0x80000000 else v


def _sext(v: int, bits: int) -> int:
    return v - (1 << bits) if v & (1 << (bits - 1)) else v


class MvuCsrBank:
    """Staged job configuration for one hart's MVU, one CSR per field."""

    def __init__(self):
        self.values = {addr: 0 for addr in range(csr.MVU_BASE, csr.MVU_LAST + 1)}

    def read(self, addr: int) -> int:
        return self.values[addr]

    def write(self, addr: int, value: int) -> None:
        if addr in csr.MVU_RESERVED:
            return
        self.values[addr] = value & M32

    def _agu(self, idx: int) -> AguConfig:
        counts = []
        jumps = []
        for lvl in range(5):
            c = self.values[csr.agu_csr(idx, csr.AGU_COUNT0 + lvl)]
            if c == 0:
                break
            counts.append(c)
            jumps.append(_s32(self.values[csr.agu_csr(idx, csr.AGU_JUMP0 + lvl)]))
        if not counts:
            raise JobInvalid(f"{csr.AGU_NAMES[idx]} AGU has no active loop levels")
        return AguConfig(tuple(counts), tuple(jumps),
                         self.values[csr.agu_csr(idx, csr.AGU_ADDR_BASE)])

    def _prec(self, addr: int) -> Precision:
        v = self.values[addr]
        return Precision(v & 0x1F, bool(v >> 5 & 1))

    def to_descriptor(self) -> JobDescriptor:
        v = self.values
        return JobDescriptor(
            prec_a=self._prec(csr.MVU_PREC_A),
            prec_w=self._prec(csr.MVU_PREC_W),
            agu_act=self._agu(0), agu_wgt=self._agu(1), agu_scaler=self._agu(2),
            agu_bias=self._agu(3), agu_out=self._agu(4),
            countdown=v[csr.MVU_COUNTDOWN],
            scaler_enable=bool(v[csr.MVU_SCALER_EN] & 1),
            pool_window=v[csr.MVU_POOL_WINDOW] or 1,
            relu_enable=bool(v[csr.MVU_RELU_EN] & 1),
            quant_msb=v[csr.MVU_QUANT_MSB],
            quant_bits=v[csr.MVU_QUANT_BITS],
            dest_mask=v[csr.MVU_DEST_MASK],
            dest_base=v[csr.MVU_DEST_BASE])


class MvuPort:
    """What the core needs from the MVU array; the machine implements this."""

    def start_job(self, hart: int, desc: JobDescriptor) -> None:
        raise NotImplementedError

    def busy_bits(self, hart: int) -> int:
        return 0

    def irq_pending(self, hart: int) -> bool:
        return False

    def irq_clear(self, hart: int) -> None:
        pass


@dataclass
class Retirement:
    hart: int
    pc: int
    word: int
    trapped: bool = False


class BarrelCpu:
    def __init__(self, port: Optional[MvuPort] = None):
        self.iram = bytearray(IRAM_BYTES)
        self.dram = bytearray(DRAM_BYTES)
        self.regs = [[0] * 32 for _ in range(HARTS)]
        self.pc = [h * HART_RESET_STRIDE for h in range(HARTS)]
        self.std_csrs = [
            {csr.MSTATUS: 0, csr.MIE: 0, csr.MTVEC: 0, csr.MSCRATCH: 0,
             csr.MEPC: 0, csr.MCAUSE: 0}
            for _ in range(HARTS)]
        self.mvu_banks = [MvuCsrBank() for _ in range(HARTS)]
        self.port = port or MvuPort()
        self.retired = [0] * HARTS
        self._decode_cache: dict[int, tuple] = {}

    def load_iram(self, words: list[int], base_word: int = 0) -> None:
        for i, w in enumerate(words):
            off = (base_word + i) * 4
            self.iram[off:off + 4] = int(w).to_bytes(4, "little")

    # Data memory -----------------------------------------------------------

    def _dram_off(self, addr: int, size: int, what: str) -> int:
        if addr % size:
            raise MisalignedAccess(addr, what)
        off = addr - DRAM_BASE
        if not 0 <= off <= DRAM_BYTES - size:
            raise CpuError(f"data access {addr:#010x} outside data RAM")
        return off

    def load_mem(self, addr: int, size: int, signed: bool) -> int:
        off = self._dram_off(addr, size, "load")
        v = int.from_bytes(self.dram[off:off + size], "little")
        if signed:
            v = _sext(v, size * 8) & M32
        return v

    def store_mem(self, addr: int, value: int, size: int) -> None:
        off = self._dram_off(addr, size, "store")
        self.dram[off:off + size] = (value & ((1 << (size * 8)) - 1)).to_bytes(
            size, "little")

    # CSRs -------------------------------------------------------------------

    def csr_access(self, hart: int, addr: int, op: str, value: int = 0) -> int:
        """Read-modify-write a CSR; returns the old value.

        ``op`` is one of ``read``, ``write``, ``set``, ``clear``.  MVU CSRs
        route to the hart's own staged job configuration; writing the start
        CSR launches the snapshot on MVU ``hart``.
        """
        value &= M32
        if addr == csr.MHARTID:
            return hart
        if addr == csr.MIP:
            return csr.MIE_MVU_DONE if self.port.irq_pending(hart) else 0
        if csr.is_mvu_csr(addr):
            bank = self.mvu_banks[hart]
            if addr == csr.MVU_JOB_START:
                old = self.port.busy_bits(hart)
                new = self._combine(old, op, value)
                if op != "read" and new & 1:
                    self.port.start_job(hart, bank.to_descriptor())
                return old
            if addr == csr.MVU_IRQ_STATUS:
                old = int(self.port.irq_pending(hart))
                new = self._combine(old, op, value)
                if op in ("write", "set") and new & 1:
                    self.port.irq_clear(hart)
                return old
            old = bank.read(addr)
            bank.write(addr, self._combine(old, op, value))
            return old
        if addr in self.std_csrs[hart]:
            old = self.std_csrs[hart][addr]
            self.std_csrs[hart][addr] = self._combine(old, op, value)
            return old
        raise UnknownCsr(addr)

    @staticmethod
    def _combine(old: int, op: str, value: int) -> int:
        if op == "read":
            return old
        if op == "write":
            return value
        if op == "set":
            return old | value
        if op == "clear":
            return old & ~value
        raise ValueError(f"bad CSR op {op}")

    # Interrupts -------------------------------------------------------------

    def _maybe_take_interrupt(self, hart: int) -> bool:
        c = self.std_csrs[hart]
        if not (c[csr.MSTATUS] & csr.MSTATUS_MIE):
            return False
        if not (c[csr.MIE] & csr.MIE_MVU_DONE):
            return False
        if not self.port.irq_pending(hart):
            return False
        c[csr.MEPC] = self.pc[hart]
        c[csr.MCAUSE] = csr.MCAUSE_MVU_DONE
        if c[csr.MSTATUS] & csr.MSTATUS_MIE:
            c[csr.MSTATUS] |= csr.MSTATUS_MPIE
        c[csr.MSTATUS] &= ~csr.MSTATUS_MIE & M32
        self.pc[hart] = c[csr.MTVEC] & ~3 & M32
        return True

    def _mret(self, hart: int) -> None:
        c = self.std_csrs[hart]
        if c[csr.MSTATUS] & csr.MSTATUS_MPIE:
            c[csr.MSTATUS] |= csr.MSTATUS_MIE
        else:
            c[csr.MSTATUS] &= ~csr.MSTATUS_MIE & M32
        c[csr.MSTATUS] &= ~csr.MSTATUS_MPIE & M32
        self.pc[hart] = c[csr.MEPC]

    # Execution ---------------------------------------------------------------

    def step_hart(self, hart: int) -> Retirement:
        """One barrel turn: trap entry if due, then retire one instruction."""
        trapped = self._maybe_take_interrupt(hart)
        pc = self.pc[hart]
        if pc % 4:
            raise MisalignedAccess(pc, "fetch")
        if not 0 <= pc <= IRAM_BYTES - 4:
            raise CpuError(f"fetch {pc:#010x} outside instruction RAM")
        word = int.from_bytes(self.iram[pc:pc + 4], "little")
        self._execute(hart, pc, word)
        self.regs[hart][0] = 0
        self.retired[hart] += 1
        return Retirement(hart, pc, word, trapped)

    def _execute(self, hart: int, pc: int, inst: int) -> None:
        x = self.regs[hart]
        opcode = inst & 0x7F
        rd = (inst >> 7) & 0x1F
        funct3 = (inst >> 12) & 0x7
        rs1 = (inst >> 15) & 0x1F
        rs2 = (inst >> 20) & 0x1F
        funct7 = inst >> 25
        next_pc = pc + 4

        if opcode == 0x13:  # op-imm
            imm = _sext(inst >> 20, 12)
            a = x[rs1]
            if funct3 == 0:
                r = a + imm
            elif funct3 == 2:
                r = int(_s32(a) < imm)
            elif funct3 == 3:
                r = int(a < (imm & M32))
            elif funct3 == 4:
                r = a ^ (imm & M32)
            elif funct3 == 6:
                r = a | (imm & M32)
            elif funct3 == 7:
                r = a & (imm & M32)
            elif funct3 == 1 and funct7 == 0:
                r = a << rs2
            elif funct3 == 5 and funct7 == 0:
                r = a >> rs2
            elif funct3 == 5 and funct7 == 0x20:
                r = _s32(a) >> rs2
            else:
                raise IllegalInstruction(inst, pc)
            if rd:
                x[rd] = r & M32
        elif opcode == 0x33:  # op
            a, b = x[rs1], x[rs2]
            if funct3 == 0 and funct7 == 0:
                r = a + b
            elif funct3 == 0 and funct7 == 0x20:
                r = a - b
            elif funct3 == 1 and funct7 == 0:
                r = a << (b & 0x1F)
            elif funct3 == 2 and funct7 == 0:
                r = int(_s32(a) < _s32(b))
            elif funct3 == 3 and funct7 == 0:
                r = int(a < b)
            elif funct3 == 4 and funct7 == 0:
                r = a ^ b
            elif funct3 == 5 and funct7 == 0:
                r = a >> (b & 0x1F)
            elif funct3 == 5 and funct7 == 0x20:
                r = _s32(a) >> (b & 0x1F)
            elif funct3 == 6 and funct7 == 0:
                r = a | b
            elif funct3 == 7 and funct7 == 0:
                r = a & b
            else:
                raise IllegalInstruction(inst, pc)
            if rd:
                x[rd] = r & M32
        elif opcode == 0x03:  # loads
            addr = (x[rs1] + _sext(inst >> 20, 12)) & M32
            if funct3 == 0:
                v = self.load_mem(addr, 1, True)
            elif funct3 == 1:
                v = self.load_mem(addr, 2, True)
            elif funct3 == 2:
                v = self.load_mem(addr, 4, False)
            elif funct3 == 4:
                v = self.load_mem(addr, 1, False)
            elif funct3 == 5:
                v = self.load_mem(addr, 2, False)
            else:
                raise IllegalInstruction(inst, pc)
            if rd:
                x[rd] = v
        elif opcode == 0x23:  # stores
            imm = _sext(((inst >> 25) << 5) | ((inst >> 7) & 0x1F), 12)
            addr = (x[rs1] + imm) & M32
            if funct3 == 0:
                self.store_mem(addr, x[rs2], 1)
            elif funct3 == 1:
                self.store_mem(addr, x[rs2], 2)
            elif funct3 == 2:
                self.store_mem(addr, x[rs2], 4)
            else:
                raise IllegalInstruction(inst, pc)
        elif opcode == 0x63:  # branches
            imm = _sext(((inst >> 31) << 12) | (((inst >> 7) & 1) << 11) |
                        (((inst >> 25) & 0x3F) << 5) | (((inst >> 8) & 0xF) << 1), 13)
            a, b = x[rs1], x[rs2]
            if funct3 == 0:
                take = a == b
            elif funct3 == 1:
                take = a != b
            elif funct3 == 4:
                take = _s32(a) < _s32(b)
            elif funct3 == 5:
                take = _s32(a) >= _s32(b)
            elif funct3 == 6:
                take = a < b
            elif funct3 == 7:
                take = a >= b
            else:
                raise IllegalInstruction(inst, pc)
            if take:
                next_pc = (pc + imm) & M32
        elif opcode == 0x37:  # lui
            if rd:
                x[rd] = inst & 0xFFFFF000
        elif opcode == 0x17:  # auipc
            if rd:
                x[rd] = (pc + (inst & 0xFFFFF000)) & M32
        elif opcode == 0x6F:  # jal
            imm = _sext(((inst >> 31) << 20) | (((inst >> 12) & 0xFF) << 12) |
                        (((inst >> 20) & 1) << 11) | (((inst >> 21) & 0x3FF) << 1), 21)
            if rd:
                x[rd] = (pc + 4) & M32
            next_pc = (pc + imm) & M32
        elif opcode == 0x67 and funct3 == 0:  # jalr
            target = (x[rs1] + _sext(inst >> 20, 12)) & M32 & ~1
            if rd:
                x[rd] = (pc + 4) & M32
            next_pc = target
        elif opcode == 0x0F:  # fence: no scheduling to order
            pass
        elif opcode == 0x73:  # system
            if inst == 0x30200073:  # mret
                self._mret(hart)
                return
            if funct3 in (1, 2, 3):
                ops = {1: "write", 2: "set", 3: "clear"}
                op = ops[funct3]
                if funct3 != 1 and rs1 == 0:
                    op = "read"
                old = self.csr_access(hart, inst >> 20, op, x[rs1])
                if rd:
                    x[rd] = old & M32
            elif funct3 in (5, 6, 7):
                ops = {5: "write", 6: "set", 7: "clear"}
                op = ops[funct3]
                if funct3 != 5 and rs1 == 0:
                    op = "read"
                old = self.csr_access(hart, inst >> 20, op, rs1)
                if rd:
                    x[rd] = old & M32
            else:
                raise IllegalInstruction(inst, pc)
        else:
            raise IllegalInstruction(inst, pc)
        self.pc[hart] = next_pc
