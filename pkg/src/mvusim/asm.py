"""Two-pass assembler and disassembler for the controller's RV32I subset.

Grammar (one statement per line, ``#`` or ``;`` comments):

    .hart N            place following code in hart N's instruction region
    label:             define a label (global namespace)
    op operands        RV32I base + csrr*/mret + a few pseudo-ops

Registers accept numeric (x0..x31) or ABI names.  CSR operands accept the
documented register-map names or numeric addresses.  Pseudo-ops: ``li``
(expands to addi or lui+addi), ``mv``, ``nop``, ``j``, ``beqz``, ``bnez``,
``csrr``, ``csrw``.  Memory operands are written ``imm(reg)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .csrdefs import CSR_ADDRS, CSR_NAMES
from .barrel import HART_IRAM_WORDS, HARTS, IRAM_BYTES

M32 = 0xFFFFFFFF


class AsmError(Exception):
    pass


class ParseError(AsmError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class RangeError(AsmError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class DuplicateLabel(AsmError):
    def __init__(self, lineno: int, label: str):
        super().__init__(f"line {lineno}: duplicate label {label!r}")
        self.label = label


ABI_REGS = ("zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 a6 a7 "
            "s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6").split()
REG_NUM = {f"x{i}": i for i in range(32)} | {n: i for i, n in enumerate(ABI_REGS)}
REG_NUM["fp"] = 8
REG_NAME = {i: f"x{i}" for i in range(32)}

BRANCHES = {"beq": 0, "bne": 1, "blt": 4, "bge": 5, "bltu": 6, "bgeu": 7}
LOADS = {"lb": 0, "lh": 1, "lw": 2, "lbu": 4, "lhu": 5}
STORES = {"sb": 0, "sh": 1, "sw": 2}
OP_IMM = {"addi": 0, "slti": 2, "sltiu": 3, "xori": 4, "ori": 6, "andi": 7}
SHIFT_IMM = {"slli": (1, 0), "srli": (5, 0), "srai": (5, 0x20)}
OP_REG = {"add": (0, 0), "sub": (0, 0x20), "sll": (1, 0), "slt": (2, 0),
          "sltu": (3, 0), "xor": (4, 0), "srl": (5, 0), "sra": (5, 0x20),
          "or": (6, 0), "and": (7, 0)}
CSR_OPS = {"csrrw": 1, "csrrs": 2, "csrrc": 3,
           "csrrwi": 5, "csrrsi": 6, "csrrci": 7}


def _reg(tok: str, lineno: int) -> int:
    r = REG_NUM.get(tok.lower())
    if r is None:
        raise ParseError(lineno, f"bad register {tok!r}")
    return r


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise ParseError(lineno, f"bad integer {tok!r}") from None


def _csr(tok: str, lineno: int) -> int:
    t = tok.lower()
    if t in CSR_ADDRS:
        return CSR_ADDRS[t]
    try:
        v = int(tok, 0)
    except ValueError:
        raise ParseError(lineno, f"unknown CSR {tok!r}") from None
    if not 0 <= v < 4096:
        raise RangeError(lineno, f"CSR address {tok} out of range")
    return v


def _check(cond: bool, lineno: int, msg: str) -> None:
    if not cond:
        raise RangeError(lineno, msg)


def enc_r(op, rd, f3, rs1, rs2, f7):
    return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | op


def enc_i(op, rd, f3, rs1, imm):
    return ((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | op


def enc_s(op, f3, rs1, rs2, imm):
    return (((imm >> 5) & 0x7F) << 25) | (rs2 << 20) | (rs1 << 15) | \
        (f3 << 12) | ((imm & 0x1F) << 7) | op


def enc_b(op, f3, rs1, rs2, imm):
    return (((imm >> 12) & 1) << 31) | (((imm >> 5) & 0x3F) << 25) | \
        (rs2 << 20) | (rs1 << 15) | (f3 << 12) | \
        (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) | op


def enc_u(op, rd, imm20):
    return ((imm20 & 0xFFFFF) << 12) | (rd << 7) | op


def enc_j(op, rd, imm):
    return (((imm >> 20) & 1) << 31) | (((imm >> 1) & 0x3FF) << 21) | \
        (((imm >> 11) & 1) << 20) | (((imm >> 12) & 0xFF) << 12) | (rd << 7) | op


MEM_RE = re.compile(r"^(-?\w+)\((\w+)\)$")


@dataclass
class Statement:
    lineno: int
    mnemonic: str
    args: list[str]
    addr: int = 0


@dataclass
class Image:
    """Assembled instruction RAM: 2048 words covering all eight hart regions."""

    words: list[int] = field(default_factory=lambda: [0] * (IRAM_BYTES // 4))
    labels: dict[str, int] = field(default_factory=dict)


def _li_words(imm: int) -> int:
    return 1 if -2048 <= imm < 2048 else 2


def _expand_pseudo(stmt: Statement) -> list[Statement]:
    m, a, n = stmt.mnemonic, stmt.args, stmt.lineno
    if m == "nop":
        return [Statement(n, "addi", ["x0", "x0", "0"])]
    if m == "mv":
        return [Statement(n, "addi", [a[0], a[1], "0"])]
    if m == "j":
        return [Statement(n, "jal", ["x0", a[0]])]
    if m == "beqz":
        return [Statement(n, "beq", [a[0], "x0", a[1]])]
    if m == "bnez":
        return [Statement(n, "bne", [a[0], "x0", a[1]])]
    if m == "csrr":
        return [Statement(n, "csrrs", [a[0], a[1], "x0"])]
    if m == "csrw":
        return [Statement(n, "csrrw", ["x0", a[0], a[1]])]
    if m == "la":
        if len(a) != 2:
            raise ParseError(n, "la needs rd, label")
        return [Statement(n, "lui", [a[0], f"%hi({a[1]})"]),
                Statement(n, "addi", [a[0], a[0], f"%lo({a[1]})"])]
    if m == "li":
        if len(a) != 2:
            raise ParseError(n, "li needs rd, imm")
        imm = _int(a[1], n)
        _check(-(1 << 31) <= imm < (1 << 32), n, f"li immediate {imm} too wide")
        if imm >= 1 << 31:
            imm -= 1 << 32
        if _li_words(imm) == 1:
            return [Statement(n, "addi", [a[0], "x0", str(imm)])]
        hi = ((imm + 0x800) >> 12) & 0xFFFFF
        lo = imm - ((imm + 0x800) & ~0xFFF)  # lui+addi wrap mod 2^32
        out = [Statement(n, "lui", [a[0], str(hi)])]
        if lo:
            out.append(Statement(n, "addi", [a[0], a[0], str(lo)]))
        return out
    return [stmt]


def assemble(source: str) -> Image:
    """Assemble to a full instruction-RAM image; idle harts get a spin loop."""
    img = Image()
    used_harts = set()
    cur_word = 0
    region_end = HART_IRAM_WORDS
    stmts: list[Statement] = []
    pending_labels: list[tuple[int, str]] = []

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = re.split(r"[#;]|//", raw)[0].strip()
        if not line:
            continue
        while True:
            m = re.match(r"^([A-Za-z_]\w*)\s*:\s*(.*)$", line)
            if not m:
                break
            pending_labels.append((lineno, m.group(1)))
            line = m.group(2).strip()
        if not line:
            continue
        parts = line.split(None, 1)
        mnemonic = parts[0].lower()
        args = [a.strip() for a in parts[1].split(",")] if len(parts) > 1 else []
        if mnemonic == ".hart":
            hart = _int(args[0] if args else parts[1], lineno)
            _check(0 <= hart < HARTS, lineno, f"hart {hart} out of range")
            cur_word = hart * HART_IRAM_WORDS
            region_end = cur_word + HART_IRAM_WORDS
            used_harts.add(hart)
            continue
        for lab_line, lab in pending_labels:
            if lab in img.labels:
                raise DuplicateLabel(lab_line, lab)
            img.labels[lab] = cur_word * 4
        pending_labels.clear()
        for st in _expand_pseudo(Statement(lineno, mnemonic, args)):
            st.addr = cur_word * 4
            stmts.append(st)
            cur_word += 1
            _check(cur_word <= region_end, lineno,
                   "code overflows the hart's instruction region")
    for lab_line, lab in pending_labels:
        if lab in img.labels:
            raise DuplicateLabel(lab_line, lab)
        img.labels[lab] = cur_word * 4

    for st in stmts:
        img.words[st.addr // 4] = _encode(st, img.labels)

    for hart in range(HARTS):
        if hart not in used_harts:
            base = hart * HART_IRAM_WORDS
            img.words[base] = enc_j(0x6F, 0, 0)  # jal x0, 0: park the hart
    return img


def _branch_target(tok: str, labels: dict[str, int], addr: int, lineno: int,
                   bits: int) -> int:
    if tok in labels:
        off = labels[tok] - addr
    else:
        off = _int(tok, lineno)
    _check(off % 2 == 0, lineno, f"branch offset {off} misaligned")
    _check(-(1 << (bits - 1)) <= off < (1 << (bits - 1)), lineno,
           f"branch offset {off} out of range")
    return off


PCT_RE = re.compile(r"^%(hi|lo)\((\w+)\)$")


def _encode(st: Statement, labels: dict[str, int]) -> int:
    m, n = st.mnemonic, st.lineno
    a = []
    for tok in st.args:
        pm = PCT_RE.match(tok)
        if pm:
            if pm.group(2) not in labels:
                raise ParseError(n, f"undefined label {pm.group(2)!r}")
            v = labels[pm.group(2)]
            hi = ((v + 0x800) >> 12) & 0xFFFFF
            tok = str(hi) if pm.group(1) == "hi" else str(v - ((v + 0x800) & ~0xFFF))
        a.append(tok)

    def need(k):
        if len(a) != k:
            raise ParseError(n, f"{m} expects {k} operands, got {len(a)}")

    if m in OP_IMM:
        need(3)
        imm = _int(a[2], n)
        _check(-2048 <= imm < 2048, n, f"immediate {imm} out of I range")
        return enc_i(0x13, _reg(a[0], n), OP_IMM[m], _reg(a[1], n), imm)
    if m in SHIFT_IMM:
        need(3)
        f3, f7 = SHIFT_IMM[m]
        sh = _int(a[2], n)
        _check(0 <= sh < 32, n, f"shift amount {sh} out of range")
        return enc_r(0x13, _reg(a[0], n), f3, _reg(a[1], n), sh, f7)
    if m in OP_REG:
        need(3)
        f3, f7 = OP_REG[m]
        return enc_r(0x33, _reg(a[0], n), f3, _reg(a[1], n), _reg(a[2], n), f7)
    if m in BRANCHES:
        need(3)
        off = _branch_target(a[2], labels, st.addr, n, 13)
        return enc_b(0x63, BRANCHES[m], _reg(a[0], n), _reg(a[1], n), off)
    if m in LOADS:
        need(2)
        mm = MEM_RE.match(a[1].replace(" ", ""))
        if not mm:
            raise ParseError(n, f"bad memory operand {a[1]!r}")
        imm = _int(mm.group(1), n)
        _check(-2048 <= imm < 2048, n, f"offset {imm} out of range")
        return enc_i(0x03, _reg(a[0], n), LOADS[m], _reg(mm.group(2), n), imm)
    if m in STORES:
        need(2)
        mm = MEM_RE.match(a[1].replace(" ", ""))
        if not mm:
            raise ParseError(n, f"bad memory operand {a[1]!r}")
        imm = _int(mm.group(1), n)
        _check(-2048 <= imm < 2048, n, f"offset {imm} out of range")
        return enc_s(0x23, STORES[m], _reg(mm.group(2), n), _reg(a[0], n), imm)
    if m == "lui":
        need(2)
        imm = _int(a[1], n)
        _check(0 <= imm < (1 << 20), n, f"lui immediate {imm} out of range")
        return enc_u(0x37, _reg(a[0], n), imm)
    if m == "auipc":
        need(2)
        imm = _int(a[1], n)
        _check(0 <= imm < (1 << 20), n, f"auipc immediate {imm} out of range")
        return enc_u(0x17, _reg(a[0], n), imm)
    if m == "jal":
        need(2)
        off = _branch_target(a[1], labels, st.addr, n, 21)
        return enc_j(0x6F, _reg(a[0], n), off)
    if m == "jalr":
        need(2)
        mm = MEM_RE.match(a[1].replace(" ", ""))
        if not mm:
            raise ParseError(n, f"bad jalr operand {a[1]!r}")
        imm = _int(mm.group(1), n)
        _check(-2048 <= imm < 2048, n, f"offset {imm} out of range")
        return enc_i(0x67, _reg(a[0], n), 0, _reg(mm.group(2), n), imm)
    if m in CSR_OPS:
        need(3)
        f3 = CSR_OPS[m]
        addr = _csr(a[1], n)
        if f3 >= 5:
            z = _int(a[2], n)
            _check(0 <= z < 32, n, f"zimm {z} out of range")
            return enc_i(0x73, _reg(a[0], n), f3, z, addr)
        return enc_i(0x73, _reg(a[0], n), f3, _reg(a[2], n), addr)
    if m == "mret":
        need(0)
        return 0x30200073
    if m == "fence":
        return enc_i(0x0F, 0, 0, 0, 0)
    raise ParseError(n, f"unknown mnemonic {m!r}")


def disassemble_word(word: int, addr: int = 0) -> str:
    """Canonical text for one encoded instruction of the supported subset."""
    opcode = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 0x7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25
    r = REG_NAME

    def sx(v, bits):
        return v - (1 << bits) if v & (1 << (bits - 1)) else v

    if word == 0x30200073:
        return "mret"
    if opcode == 0x13:
        imm = sx(word >> 20, 12)
        for name, f in OP_IMM.items():
            if f == f3 and not (f3 in (1, 5)):
                return f"{name} {r[rd]}, {r[rs1]}, {imm}"
        for name, (f, c7) in SHIFT_IMM.items():
            if f == f3 and c7 == f7:
                return f"{name} {r[rd]}, {r[rs1]}, {rs2}"
    if opcode == 0x33:
        for name, (f, c7) in OP_REG.items():
            if f == f3 and c7 == f7:
                return f"{name} {r[rd]}, {r[rs1]}, {r[rs2]}"
    if opcode == 0x63:
        imm = sx(((word >> 31) << 12) | (((word >> 7) & 1) << 11) |
                 (((word >> 25) & 0x3F) << 5) | (((word >> 8) & 0xF) << 1), 13)
        for name, f in BRANCHES.items():
            if f == f3:
                return f"{name} {r[rs1]}, {r[rs2]}, {imm}"
    if opcode == 0x03:
        imm = sx(word >> 20, 12)
        for name, f in LOADS.items():
            if f == f3:
                return f"{name} {r[rd]}, {imm}({r[rs1]})"
    if opcode == 0x23:
        imm = sx(((word >> 25) << 5) | ((word >> 7) & 0x1F), 12)
        for name, f in STORES.items():
            if f == f3:
                return f"{name} {r[rs2]}, {imm}({r[rs1]})"
    if opcode == 0x37:
        return f"lui {r[rd]}, {word >> 12}"
    if opcode == 0x17:
        return f"auipc {r[rd]}, {word >> 12}"
    if opcode == 0x6F:
        imm = sx(((word >> 31) << 20) | (((word >> 12) & 0xFF) << 12) |
                 (((word >> 20) & 1) << 11) | (((word >> 21) & 0x3FF) << 1), 21)
        return f"jal {r[rd]}, {imm}"
    if opcode == 0x67 and f3 == 0:
        return f"jalr {r[rd]}, {sx(word >> 20, 12)}({r[rs1]})"
    if opcode == 0x0F:
        return "fence"
    if opcode == 0x73 and f3 in (1, 2, 3, 5, 6, 7):
        csr_tok = CSR_NAMES.get(word >> 20, hex(word >> 20))
        for name, f in CSR_OPS.items():
            if f == f3:
                src = str(rs1) if f3 >= 5 else r[rs1]
                return f"{name} {r[rd]}, {csr_tok}, {src}"
    return f".word {word:#010x}"
