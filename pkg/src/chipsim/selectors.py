"""Address-to-bank selection strategies.

Every strategy maps a byte address to a bank (or channel, or cache set) index
by first dropping the offset bits within a cache line.  The block-based
strategies need a power-of-two bank count; Direct and RotationMix4 work for
any count and Zero ignores the address entirely.
"""

from enum import Enum, auto

from .kernel import ConfigurationError

MASK64 = (1 << 64) - 1

# Multipliers for the four-round rotate-xor-multiply hash.  Fixed so that a
# given configuration always produces the same bank schedule.
_MIX_K = (
    0x9E3779B97F4A7C15,
    0xBF58476D1CE4E5B9,
    0x94D049BB133111EB,
    0xFF51AFD7ED558CCD,
)


class SelectorKind(Enum):
    ZERO = auto()
    DIRECT = auto()
    DIRECT_BINARY = auto()
    RIGHT_XOR = auto()
    RIGHT_ADD = auto()
    XOR_FOLD = auto()
    ADD_FOLD = auto()
    ROTATION_MIX4 = auto()


_BY_NAME = {
    "zero": SelectorKind.ZERO,
    "direct": SelectorKind.DIRECT,
    "directbinary": SelectorKind.DIRECT_BINARY,
    "rightxor": SelectorKind.RIGHT_XOR,
    "rightadd": SelectorKind.RIGHT_ADD,
    "xorfold": SelectorKind.XOR_FOLD,
    "addfold": SelectorKind.ADD_FOLD,
    "rotationmix4": SelectorKind.ROTATION_MIX4,
}

# Strategies whose block arithmetic only makes sense for 2^b banks.
_NEEDS_POW2 = {
    SelectorKind.DIRECT_BINARY,
    SelectorKind.RIGHT_XOR,
    SelectorKind.RIGHT_ADD,
    SelectorKind.XOR_FOLD,
    SelectorKind.ADD_FOLD,
}


def selector_kind(name: str) -> SelectorKind:
    try:
        return _BY_NAME[name.strip().lower()]
    except KeyError:
        raise ConfigurationError("unknown selector kind: %s" % name) from None


def selector_name(kind: SelectorKind) -> str:
    for name, k in _BY_NAME.items():
        if k is kind:
            return name
    raise ValueError(kind)


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def check_selector(kind: SelectorKind, bank_count: int, line_bytes: int):
    if bank_count < 1:
        raise ConfigurationError("bank count must be >= 1")
    if not _is_pow2(line_bytes):
        raise ConfigurationError("line size must be a power of two")
    if kind in _NEEDS_POW2 and not _is_pow2(bank_count):
        raise ConfigurationError(
            "%s requires a power-of-two bank count, got %d"
            % (selector_name(kind), bank_count))


def _rotl64(v, r):
    return ((v << r) | (v >> (64 - r))) & MASK64


def _mix4(line):
    h = line & MASK64
    for i in range(4):
        h ^= h >> 23
        h = _rotl64(h, 13 + 7 * i)
        h = (h * _MIX_K[i]) & MASK64
    return h


def select_bank(kind: SelectorKind, address: int, bank_count: int,
                line_bytes: int) -> int:
    """Pure mapping of a byte address to a bank index in [0, bank_count)."""
    check_selector(kind, bank_count, line_bytes)
    if kind is SelectorKind.ZERO:
        return 0
    line = address >> (line_bytes.bit_length() - 1)
    if kind is SelectorKind.DIRECT:
        return line % bank_count
    if kind is SelectorKind.ROTATION_MIX4:
        # The hash ignores the bank count; for 2^b banks the reduction
        # equals masking to the low b bits.
        return _mix4(line) % bank_count
    if bank_count == 1:
        return 0
    mask = bank_count - 1
    b = bank_count.bit_length() - 1
    if kind is SelectorKind.DIRECT_BINARY:
        return line & mask
    if kind is SelectorKind.RIGHT_XOR:
        return (line ^ (line >> b)) & mask
    if kind is SelectorKind.RIGHT_ADD:
        return (line + (line >> b)) & mask
    if kind is SelectorKind.XOR_FOLD:
        acc = 0
        v = line
        while v:
            acc ^= v & mask
            v >>= b
        return acc
    if kind is SelectorKind.ADD_FOLD:
        acc = 0
        v = line
        while v:
            acc += v & mask
            v >>= b
        return acc & mask
    raise ValueError(kind)


class BankSelector:
    """Per-core selector instance bound to one geometry."""

    def __init__(self, kind: SelectorKind, bank_count: int, line_bytes: int):
        check_selector(kind, bank_count, line_bytes)
        self.kind = kind
        self.bank_count = bank_count
        self.line_bytes = line_bytes

    def select(self, address: int) -> int:
        return select_bank(self.kind, address, self.bank_count, self.line_bytes)

    def __repr__(self):
        return "BankSelector(%s, banks=%d)" % (
            selector_name(self.kind), self.bank_count)
