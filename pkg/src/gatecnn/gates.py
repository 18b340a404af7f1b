"""Boolean circuits composed from the single NAND primitive.

Everything here is a pure function over immutable bits: derived gates,
ripple adders, two's-complement subtract, a Wallace-tree multiplier
(3:2 full-adder compressors only), sign-based comparison and an
oblivious multiplexer.  The gate sequence of every circuit depends only
on operand widths, never on values, so encrypted evaluation leaks
nothing through the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BackendMismatchError, ParameterError, WidthMismatchError
from .fhe_core import EncBit, nand, trivial_const

__all__ = [
    "BitVector",
    "CompareResult",
    "not_gate",
    "and_gate",
    "or_gate",
    "xor_gate",
    "half_adder",
    "full_adder",
    "add",
    "sub",
    "mul_wallace",
    "mul_schoolbook",
    "compare",
    "mux",
    "wallace_depth",
]


def not_gate(a: EncBit) -> EncBit:
    return nand(a, a)


def and_gate(a: EncBit, b: EncBit) -> EncBit:
    n = nand(a, b)
    return nand(n, n)


def or_gate(a: EncBit, b: EncBit) -> EncBit:
    return nand(nand(a, a), nand(b, b))


def xor_gate(a: EncBit, b: EncBit) -> EncBit:
    n = nand(a, b)
    return nand(nand(a, n), nand(b, n))


def half_adder(a: EncBit, b: EncBit):
    """(sum, carry) in 5 NANDs."""
    n = nand(a, b)
    s = nand(nand(a, n), nand(b, n))
    return s, nand(n, n)


def full_adder(a: EncBit, b: EncBit, cin: EncBit):
    """(sum, carry-out) in 9 NANDs: sum = a^b^cin, cout = majority."""
    n1 = nand(a, b)
    axb = nand(nand(a, n1), nand(b, n1))
    n5 = nand(axb, cin)
    s = nand(nand(axb, n5), nand(cin, n5))
    cout = nand(n5, n1)
    return s, cout


class BitVector:
    """Ordered bits of one backend, index 0 = least significant."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        bits = tuple(bits)
        if not bits:
            raise ParameterError("BitVector needs at least one bit")
        backend = bits[0].backend
        for b in bits:
            if b.backend is not backend:
                raise BackendMismatchError("BitVector bits span multiple backends")
        self.bits = bits

    @property
    def width(self) -> int:
        return len(self.bits)

    @property
    def backend(self):
        return self.bits[0].backend

    @classmethod
    def from_int(cls, value: int, width: int, backend, encrypt: bool = False) -> "BitVector":
        """Two's-complement encode; `encrypt` uses the backend's private entry."""
        mask = (1 << width) - 1
        value &= mask
        make = backend.encrypt_bit if encrypt else backend.const
        return cls(make((value >> i) & 1) for i in range(width))

    @classmethod
    def from_lane_ints(cls, values, width: int, backend) -> "BitVector":
        """Pack one two's-complement value per clear lane."""
        if len(values) != backend.lanes:
            raise ParameterError("need exactly one value per lane")
        bits = []
        for i in range(width):
            mask = 0
            for lane, v in enumerate(values):
                mask |= ((v >> i) & 1) << lane
            bits.append(backend.from_mask(mask))
        return cls(bits)

    def to_int(self, lane: int = 0) -> int:
        """Signed value of one lane (clear directly; gsw via the backend key)."""
        backend = self.backend
        value = 0
        for i, b in enumerate(self.bits):
            value |= backend.reveal_bit(b, lane) << i
        if value >> (self.width - 1):
            value -= 1 << self.width
        return value

    def to_lane_ints(self):
        return [self.to_int(lane) for lane in range(self.backend.lanes)]


@dataclass(frozen=True)
class CompareResult:
    """Outcome bits of compare(a, b): a<b sign and a==b flag."""

    is_negative: EncBit
    is_zero: EncBit


def _check_widths(a: BitVector, b: BitVector) -> None:
    if a.width != b.width:
        raise WidthMismatchError(f"width mismatch: {a.width} vs {b.width}")


def _ripple(a_bits, b_bits, cin: EncBit):
    out = []
    carry = cin
    for x, y in zip(a_bits, b_bits):
        s, carry = full_adder(x, y, carry)
        out.append(s)
    return out, carry


def add(a: BitVector, b: BitVector) -> BitVector:
    """Two's-complement sum modulo 2^width (ripple carry, wraparound)."""
    _check_widths(a, b)
    zero = trivial_const(0, a.backend)
    out, _ = _ripple(a.bits, b.bits, zero)
    return BitVector(out)


def sub(a: BitVector, b: BitVector) -> BitVector:
    """a - b as a + ~b + 1, same width."""
    _check_widths(a, b)
    one = trivial_const(1, a.backend)
    out, _ = _ripple(a.bits, [not_gate(y) for y in b.bits], one)
    return BitVector(out)


def _sign_extend(v: BitVector, width: int):
    return list(v.bits) + [v.bits[-1]] * (width - v.width)


def mul_wallace(a: BitVector, b: BitVector) -> BitVector:
    """Full 2w-bit signed product.

    Both operands are sign-extended to 2w, the partial-product triangle is
    formed with ANDs, columns are compressed with 3:2 full adders until at
    most two rows remain, and a final ripple add produces the result.
    Working modulo 2^(2w) makes the sign handling automatic.
    """
    _check_widths(a, b)
    w2 = 2 * a.width
    backend = a.backend
    aa = _sign_extend(a, w2)
    bb = _sign_extend(b, w2)
    columns = [[] for _ in range(w2)]
    for j in range(w2):
        for i in range(w2 - j):
            columns[i + j].append(and_gate(aa[i], bb[j]))
    columns = _compress_columns(columns)
    zero = trivial_const(0, backend)
    row0 = BitVector(col[0] if len(col) > 0 else zero for col in columns)
    row1 = BitVector(col[1] if len(col) > 1 else zero for col in columns)
    return add(row0, row1)


def _compress_columns(columns):
    """One classic Wallace reduction: full adders on triples, a half adder
    on a leftover pair, until every column holds at most two bits."""
    while max(len(col) for col in columns) > 2:
        nxt = [[] for _ in range(len(columns))]
        for c, col in enumerate(columns):
            i = 0
            while len(col) - i >= 3:
                s, cout = full_adder(col[i], col[i + 1], col[i + 2])
                nxt[c].append(s)
                if c + 1 < len(columns):
                    nxt[c + 1].append(cout)
                i += 3
            if len(col) - i == 2:
                s, cout = half_adder(col[i], col[i + 1])
                nxt[c].append(s)
                if c + 1 < len(columns):
                    nxt[c + 1].append(cout)
            else:
                nxt[c].extend(col[i:])
        columns = nxt
    return columns


def wallace_depth(width: int) -> int:
    """Number of compression stages for a width-w multiply (no gates built).

    Column c of the sign-extended partial-product triangle holds c+1 bits;
    the height evolution mirrors _compress_columns exactly.
    """
    heights = [c + 1 for c in range(2 * width)]
    stages = 0
    while max(heights) > 2:
        heights = _compress_heights(heights)
        stages += 1
    return stages


def _compress_heights(heights):
    nxt = [0] * len(heights)
    for c, h in enumerate(heights):
        fas, rem = divmod(h, 3)
        if rem == 2:
            nxt[c] += fas + 1
            carries = fas + 1
        else:
            nxt[c] += fas + rem
            carries = fas
        if c + 1 < len(heights):
            nxt[c + 1] += carries
    return nxt


def mul_schoolbook(a: BitVector, b: BitVector) -> BitVector:
    """Shift-and-add reference multiplier (independent of the Wallace path)."""
    _check_widths(a, b)
    w2 = 2 * a.width
    backend = a.backend
    zero = trivial_const(0, backend)
    aa = _sign_extend(a, w2)
    bb = _sign_extend(b, w2)
    acc = BitVector([zero] * w2)
    for j in range(w2):
        shifted = [zero] * j + aa[: w2 - j]
        addend = BitVector(and_gate(bit, bb[j]) for bit in shifted)
        acc = add(acc, addend)
    return acc


def compare(a: BitVector, b: BitVector) -> CompareResult:
    """Sign and zero flags of a - b.

    Precondition: |a - b| must fit in width-1 bits, otherwise the
    subtraction wraps and the sign lies.  CNN values are range-bounded by
    construction, so no widened subtraction is spent on this.
    """
    diff = sub(a, b)
    not_bits = [not_gate(x) for x in diff.bits]
    all_zero = not_bits[0]
    for x in not_bits[1:]:
        all_zero = and_gate(all_zero, x)
    return CompareResult(is_negative=diff.bits[-1], is_zero=all_zero)


def mux(sel: EncBit, on_true: BitVector, on_false: BitVector) -> BitVector:
    """Oblivious per-bit select: on_true where sel=1, else on_false."""
    _check_widths(on_true, on_false)
    nsel = not_gate(sel)
    return BitVector(
        nand(nand(sel, t), nand(nsel, f))
        for t, f in zip(on_true.bits, on_false.bits)
    )
