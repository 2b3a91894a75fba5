"""Control/status register map: standard machine CSRs plus the 74 MVU CSRs.

The MVU block occupies the contiguous range 0x800..0x849 (74 registers).
Each hart's MVU CSRs configure its own unit only (hart i <-> MVU i).  Every
job-descriptor field is reachable through exactly one CSR; see REGISTERS.md
for the documented table.
"""

# Standard machine-mode CSRs (per hart).
MSTATUS = 0x300
MIE = 0x304
MTVEC = 0x305
MSCRATCH = 0x340
MEPC = 0x341
MCAUSE = 0x342
MIP = 0x344
MHARTID = 0xF14

MSTATUS_MIE = 1 << 3
MSTATUS_MPIE = 1 << 7
IRQ_MVU_DONE = 16  # interrupt cause: this hart's MVU finished a job
MIE_MVU_DONE = 1 << IRQ_MVU_DONE
MCAUSE_MVU_DONE = (1 << 31) | IRQ_MVU_DONE

# MVU job CSRs.
MVU_BASE = 0x800
MVU_PREC_A = 0x800      # bits[4:0] | signed<<5
MVU_PREC_W = 0x801
MVU_COUNTDOWN = 0x802
MVU_SCALER_EN = 0x803
MVU_POOL_WINDOW = 0x804
MVU_RELU_EN = 0x805
MVU_QUANT_MSB = 0x806
MVU_QUANT_BITS = 0x807
MVU_DEST_MASK = 0x808
MVU_DEST_BASE = 0x809
MVU_JOB_START = 0x80A   # write bit0: launch; read: bit0 busy, bit1 queued
MVU_IRQ_STATUS = 0x80B  # read: bit0 done-pending; write bit0: clear
# 0x80C..0x812 reserved (read as 0, writes ignored)
MVU_RESERVED = tuple(range(0x80C, 0x813))

# Five address generators, 11 CSRs each: counts 0..4, jumps 0..4, base.
AGU_NAMES = ("act", "wgt", "scaler", "bias", "out")
AGU_BASE = 0x813
AGU_STRIDE = 11
AGU_COUNT0 = 0
AGU_JUMP0 = 5
AGU_ADDR_BASE = 10

MVU_LAST = AGU_BASE + 5 * AGU_STRIDE - 1  # 0x849
MVU_CSR_COUNT = MVU_LAST - MVU_BASE + 1
assert MVU_CSR_COUNT == 74


def agu_csr(agu: int, field: int) -> int:
    return AGU_BASE + agu * AGU_STRIDE + field


def is_mvu_csr(addr: int) -> bool:
    return MVU_BASE <= addr <= MVU_LAST


CSR_NAMES = {
    MSTATUS: "mstatus", MIE: "mie", MTVEC: "mtvec", MSCRATCH: "mscratch",
    MEPC: "mepc", MCAUSE: "mcause", MIP: "mip", MHARTID: "mhartid",
    MVU_PREC_A: "mvuaprec", MVU_PREC_W: "mvuwprec",
    MVU_COUNTDOWN: "mvucountdown", MVU_SCALER_EN: "mvuscaleren",
    MVU_POOL_WINDOW: "mvupoolwin", MVU_RELU_EN: "mvureluen",
    MVU_QUANT_MSB: "mvuquantmsb", MVU_QUANT_BITS: "mvuquantbits",
    MVU_DEST_MASK: "mvudestmask", MVU_DEST_BASE: "mvudestbase",
    MVU_JOB_START: "mvustart", MVU_IRQ_STATUS: "mvustatus",
}
for _i, _name in enumerate(AGU_NAMES):
    for _lvl in range(5):
        CSR_NAMES[agu_csr(_i, AGU_COUNT0 + _lvl)] = f"mvu{_name}count{_lvl}"
        CSR_NAMES[agu_csr(_i, AGU_JUMP0 + _lvl)] = f"mvu{_name}jump{_lvl}"
    CSR_NAMES[agu_csr(_i, AGU_ADDR_BASE)] = f"mvu{_name}base"
for _j, _addr in enumerate(MVU_RESERVED):
    CSR_NAMES[_addr] = f"mvursvd{_j}"

CSR_ADDRS = {name: addr for addr, name in CSR_NAMES.items()}
