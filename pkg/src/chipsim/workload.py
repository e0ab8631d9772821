"""Workload descriptions for trace-driven cores.

A workload is a list of WorkloadOp values, produced either by parsing a
trace file (one op per line) or by one of the built-in generators.

Trace grammar, one op per line, `#` starts a comment:

    L <hexaddr> <size>              load
    S <hexaddr> <size> <hexvalue>   store (value little-endian in size bytes)
    D <cycles>                      idle for the stated number of core cycles
    C <counter-index>               read a performance counter
    H                               halt; ends the trace
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum, IntEnum, auto

from .kernel import ConfigurationError


class WorkloadOpKind(Enum):
    LOAD = auto()
    STORE = auto()
    DELAY = auto()
    READ_COUNTER = auto()
    HALT = auto()


class CounterKind(IntEnum):
    CYCLES = 0
    OPS_EXECUTED = 1
    MEM_REQUESTS = 2
    L1_HITS = 3
    L1_MISSES = 4


@dataclass(frozen=True)
class WorkloadOp:
    kind: WorkloadOpKind
    address: int = 0
    size: int = 0
    value: bytes = b""
    cycles: int = 0
    counter: int = 0


def load_op(address, size=8):
    return WorkloadOp(WorkloadOpKind.LOAD, address=address, size=size)


def store_op(address, value):
    return WorkloadOp(WorkloadOpKind.STORE, address=address,
                      size=len(value), value=value)


def delay_op(cycles):
    return WorkloadOp(WorkloadOpKind.DELAY, cycles=cycles)


def read_counter_op(index):
    return WorkloadOp(WorkloadOpKind.READ_COUNTER, counter=index)


HALT_OP = WorkloadOp(WorkloadOpKind.HALT)


def parse_trace(text):
    """Parse trace text into a list of ops.  `H` ends the trace."""
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0].upper()
        try:
            if head == "L" and len(parts) == 3:
                size = int(parts[2])
                if size < 1:
                    raise ValueError("size")
                ops.append(load_op(int(parts[1], 16), size))
            elif head == "S" and len(parts) == 4:
                size = int(parts[2])
                if size < 1:
                    raise ValueError("size")
                value = int(parts[3], 16).to_bytes(size, "little")
                ops.append(store_op(int(parts[1], 16), value))
            elif head == "D" and len(parts) == 2:
                cycles = int(parts[1])
                if cycles < 1:
                    raise ValueError("cycles")
                ops.append(delay_op(cycles))
            elif head == "C" and len(parts) == 2:
                ops.append(read_counter_op(int(parts[1])))
            elif head == "H" and len(parts) == 1:
                ops.append(HALT_OP)
                return ops
            else:
                raise ValueError("op")
        except (ValueError, OverflowError):
            raise ConfigurationError(
                "trace line %d: cannot parse %r" % (lineno, raw)) from None
    return ops


# -- deterministic generators ---------------------------------------------------


def stride(start, step, count):
    """`count` loads walking from `start` in increments of `step` bytes."""
    ops = [load_op(start + i * step) for i in range(count)]
    ops.append(HALT_OP)
    return ops


def uniform(seed, addr_range, count):
    """`count` loads at uniformly random 8-byte-aligned addresses."""
    if addr_range < 8:
        raise ConfigurationError("uniform: range must be at least 8 bytes")
    rng = random.Random(seed)
    slots = addr_range // 8
    ops = [load_op(rng.randrange(slots) * 8) for _ in range(count)]
    ops.append(HALT_OP)
    return ops


def chase(seed, nodes, count):
    """Pointer-chase: `count` loads following one random cycle over `nodes`
    line-sized slots."""
    if nodes < 1:
        raise ConfigurationError("chase: nodes must be >= 1")
    rng = random.Random(seed)
    order = list(range(nodes))
    rng.shuffle(order)
    successor = {order[i]: order[(i + 1) % nodes] for i in range(nodes)}
    ops = []
    node = order[0]
    for _ in range(count):
        ops.append(load_op(node * 64))
        node = successor[node]
    ops.append(HALT_OP)
    return ops


_GENERATORS = {"stride": stride, "uniform": uniform, "chase": chase}

_SPEC_RE = re.compile(r"(\w+)\((.*)\)\s*$")


def generate(spec):
    """Build a workload from a generator spec like `stride(0,64,100)`."""
    m = _SPEC_RE.match(spec.strip())
    if not m:
        raise ConfigurationError("bad generator spec: %r" % spec)
    name = m.group(1).lower()
    fn = _GENERATORS.get(name)
    if fn is None:
        raise ConfigurationError(
            "unknown generator %r (have: %s)" % (name, ", ".join(sorted(_GENERATORS))))
    try:
        args = [int(a) for a in m.group(2).split(",")] if m.group(2).strip() else []
        return fn(*args)
    except (ValueError, TypeError):
        raise ConfigurationError("bad generator arguments: %r" % spec) from None
