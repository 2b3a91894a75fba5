"""Exact integer semantics of the bit-serial arithmetic core.

Everything here is plain Python integers, so arithmetic is exact at any
precision.  Tensors bound for accelerator RAM are held as bit planes: all
bits of equal significance from a block of elements share one memory word,
most significant plane at the lowest address.  The dot-product kernel walks
bit-position pairs grouped by magnitude, shifting a wide accumulator left
one bit between groups, which reproduces the exact integer dot product for
unsigned and 2's-complement operands alike.

Everything in this module is a pure function over immutable inputs and is
safe to call from any number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

MASK64 = (1 << 64) - 1


class BitSerialError(Exception):
    """Base class for arithmetic-core errors."""


class OutOfRange(BitSerialError):
    def __init__(self, element: int, precision: "Precision"):
        super().__init__(f"value {element} not representable as {precision}")
        self.element = element
        self.precision = precision


class MalformedTensor(BitSerialError):
    pass


class LaneMismatch(BitSerialError):
    pass


@dataclass(frozen=True)
class Precision:
    """Fixed-point element width, 1..16 bits, unsigned or 2's complement."""

    bits: int
    signed: bool = False

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise ValueError(f"precision must be 1..16 bits, got {self.bits}")

    @property
    def lo(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def hi(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1

    def contains(self, value: int) -> bool:
        return self.lo <= value <= self.hi

    def __str__(self) -> str:
        return f"{'s' if self.signed else 'u'}{self.bits}"


@dataclass(frozen=True)
class BitTransposedTensor:
    """Elements stored as bit planes, one word per plane per block.

    A block of ``block_width`` elements at precision ``b`` occupies exactly
    ``b`` consecutive words in ``planes``; the first word of each block is
    the MSB plane.  Signed elements are stored as 2's-complement patterns.
    """

    shape: tuple[int, ...]
    precision: Precision
    block_width: int
    planes: tuple[int, ...]

    @property
    def n_elements(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def n_blocks(self) -> int:
        return self.n_elements // self.block_width

    def block_planes(self, block: int) -> tuple[int, ...]:
        b = self.precision.bits
        return self.planes[block * b:(block + 1) * b]


def transpose(elements: Sequence[int], precision: Precision,
              block_width: int = 64) -> BitTransposedTensor:
    """Pack elements into MSB-first bit planes, ``block_width`` lanes per word."""
    if block_width < 1:
        raise MalformedTensor(f"block width must be positive, got {block_width}")
    if len(elements) == 0 or len(elements) % block_width:
        raise MalformedTensor(
            f"element count {len(elements)} is not a positive multiple of {block_width}")
    mask = (1 << precision.bits) - 1
    planes = []
    for base in range(0, len(elements), block_width):
        patterns = []
        for e in elements[base:base + block_width]:
            if not precision.contains(e):
                raise OutOfRange(e, precision)
            patterns.append(e & mask)
        for pos in range(precision.bits - 1, -1, -1):
            word = 0
            for lane, pat in enumerate(patterns):
                word |= ((pat >> pos) & 1) << lane
            planes.append(word)
    return BitTransposedTensor(
        shape=(len(elements),), precision=precision,
        block_width=block_width, planes=tuple(planes))


def untranspose(t: BitTransposedTensor) -> list[int]:
    """Exact inverse of :func:`transpose`; signed planes read as 2's complement."""
    b = t.precision.bits
    if t.n_elements % t.block_width or len(t.planes) != b * t.n_blocks:
        raise MalformedTensor(
            f"{len(t.planes)} planes inconsistent with {t.n_blocks} blocks of {b} bits")
    out = []
    sign_bias = 1 << b
    for block in range(t.n_blocks):
        words = t.block_planes(block)
        for lane in range(t.block_width):
            v = 0
            for word in words:  # MSB plane first
                v = (v << 1) | ((word >> lane) & 1)
            if t.precision.signed and v >= (1 << (b - 1)):
                v -= sign_bias
            out.append(v)
    return out


def bit_combination_schedule(b_a: int, b_w: int) -> list[list[tuple[int, int]]]:
    """Bit-pair groups by descending magnitude.

    Group ``i`` (from ``b_a+b_w`` down to 2) holds every (j, k) with
    ``j + k == i``, j an activation bit index and k a weight bit index,
    index 1 = LSB.  Pairs within a group are ordered by ascending j, which
    is the order a two-level address-generator nest can stream when the
    narrower operand is 1 or 2 bits wide.
    """
    Precision(b_a), Precision(b_w)  # range check
    groups = []
    for i in range(b_a + b_w, 1, -1):
        groups.append([(j, i - j) for j in range(max(1, i - b_w), min(b_a, i - 1) + 1)])
    return groups


def adder_tree_sum(lane_bits_x: int, lane_bits_w: int) -> int:
    """Sum of the 64 one-bit lane products: popcount of the masked AND."""
    return (lane_bits_x & lane_bits_w & MASK64).bit_count()


def dot_from_planes(x_planes: Sequence[int], w_planes: Sequence[int],
                    prec_a: Precision, prec_w: Precision) -> int:
    """Bit-serial dot product over raw 64-lane plane words (MSB first).

    For signed operands, a pair where exactly one index is its operand's
    sign-bit position contributes negatively; both-sign pairs are positive,
    matching the expansion of 2's-complement values.
    """
    if len(x_planes) != prec_a.bits or len(w_planes) != prec_w.bits:
        raise MalformedTensor("plane count does not match precision")
    acc = 0
    for gi, group in enumerate(bit_combination_schedule(prec_a.bits, prec_w.bits)):
        if gi:
            acc <<= 1
        for j, k in group:
            term = adder_tree_sum(x_planes[prec_a.bits - j], w_planes[prec_w.bits - k])
            sign_j = prec_a.signed and j == prec_a.bits
            sign_k = prec_w.signed and k == prec_w.bits
            acc += -term if sign_j != sign_k else term
    return acc


def bitserial_dot(x: BitTransposedTensor, w: BitTransposedTensor) -> int:
    """Exact dot product of two single-block 64-lane bit-transposed vectors."""
    for t in (x, w):
        if t.block_width != 64:
            raise LaneMismatch(f"expected 64 lanes, got {t.block_width}")
        if t.n_blocks != 1:
            raise LaneMismatch(f"expected a single block, got {t.n_blocks}")
    return dot_from_planes(x.planes, w.planes, x.precision, w.precision)


def schedule_cycle_count(b_a: int, b_w: int) -> int:
    return b_a * b_w


def flat_schedule(b_a: int, b_w: int) -> list[tuple[int, int, bool]]:
    """Flattened (j, k, shift_after) cycle sequence for one block/tile visit."""
    out = []
    groups = bit_combination_schedule(b_a, b_w)
    for gi, group in enumerate(groups):
        last_group = gi == len(groups) - 1
        for pi, pair in enumerate(group):
            shift_after = (pi == len(group) - 1) and not last_group
            out.append((pair[0], pair[1], shift_after))
    return out


def pack_lanes(bits: Iterable[int]) -> int:
    """Pack per-lane bits (lane 0 = LSB) into one word."""
    word = 0
    for lane, bit in enumerate(bits):
        word |= (bit & 1) << lane
    return word
