"""Trace-driven core with a small set-associative L1 data cache.

The core issues one workload op per core cycle while the number of
outstanding memory requests stays below its limit.  The L1 follows the
classic two-process shape: an Outgoing process drains `m_outgoing` into the
attached memory port, an Incoming process drains the port's response buffer,
and both the core's issue path and Incoming must win the `p_service`
arbitrator before touching the line array.  Writes go straight through to
memory (no write-allocate); a store that hits a line waits for an in-flight
fetch of that line to land first.
"""

from __future__ import annotations

from enum import Enum, auto

from .kernel import (
    Component,
    ConfigurationError,
    ContractViolation,
    FAILED,
    SUCCESS,
    Strategy,
    TraceCategory,
)
from .memory import MemoryOpKind, MemoryRequest, ResponseKind
from .workload import WorkloadOpKind


class LineState(Enum):
    EMPTY = auto()
    LOADING = auto()
    FULL = auto()


class CacheLine:
    """One cache line; `waiters` and `pending` are only used while LOADING."""

    __slots__ = ("way", "tag", "state", "dirty", "data", "waiters", "pending")

    def __init__(self, way, line_bytes):
        self.way = way
        self.tag = None
        self.state = LineState.EMPTY
        self.dirty = False
        self.data = bytearray(line_bytes)
        self.waiters = []   # (address, size) of loads awaiting the fill
        self.pending = []   # (offset, bytes) snooped while LOADING

    def snapshot(self):
        return (self.tag, self.state.name, self.dirty, bytes(self.data),
                len(self.waiters), len(self.pending))


class L1Cache(Component):
    """Set-associative write-through data cache between a core and memory."""

    def __init__(self, core, sets, ways, line_bytes, outgoing_capacity):
        super().__init__(core, "l1")
        if sets < 1 or sets & (sets - 1):
            raise ConfigurationError("%s: sets must be a power of two" % self.path)
        if ways < 1:
            raise ConfigurationError("%s: ways must be >= 1" % self.path)
        self.core = core
        self.sets = sets
        self.ways = ways
        self.line_bytes = line_bytes
        self._sets = [[CacheLine(w, line_bytes) for w in range(ways)]
                      for _ in range(sets)]
        self._victim_ptr = [0] * sets
        self.m_outgoing = self.buffer("m_outgoing", outgoing_capacity)
        self.p_service = self.arbitrator("p_service", Strategy.PRIORITY)
        self.outgoing_proc = self.add_process(
            "outgoing", self.m_outgoing, self._do_outgoing)
        self.port = None
        self.m_incoming = None

    def bind(self, port):
        """Attach the memory port; creates the Incoming process."""
        self.port = port
        self.m_incoming = port.responses
        incoming = self.add_process("incoming", self.m_incoming,
                                    self._do_incoming)
        self.p_service.register(incoming)

    def inspect_state(self):
        return {"lines": tuple(line.snapshot()
                               for group in self._sets for line in group)}

    # -- lookup helpers -------------------------------------------------------

    def _locate(self, base):
        set_idx = (base // self.line_bytes) & (self.sets - 1)
        for line in self._sets[set_idx]:
            if line.state is not LineState.EMPTY and line.tag == base:
                return set_idx, line
        return set_idx, None

    def _pick_victim(self, set_idx):
        group = self._sets[set_idx]
        for line in group:
            if line.state is LineState.EMPTY:
                return line
        start = self._victim_ptr[set_idx]
        for i in range(len(group)):
            line = group[(start + i) % len(group)]
            if line.state is not LineState.LOADING:
                return line
        return None

    def _find_loading(self, base):
        _, line = self._locate(base)
        if line is None or line.state is not LineState.LOADING:
            raise ContractViolation(
                "%s: fill for 0x%x has no loading line" % (self.path, base))
        return line

    # -- the client access path (runs as the core's issue process) -------------

    def access(self, op):
        """Issue one load/store; claim semantics (False means stall)."""
        core = self.core
        if not self.p_service.invoke():
            return False
        base = op.address - op.address % self.line_bytes
        off = op.address - base
        if off + op.size > self.line_bytes:
            raise ContractViolation(
                "%s: access 0x%x+%d crosses a cache line"
                % (self.path, op.address, op.size))
        set_idx, line = self._locate(base)

        if op.kind is WorkloadOpKind.LOAD:
            if line is not None and line.state is LineState.FULL:
                def hit():
                    core.l1_hits += 1
                    core.mem_requests += 1
                    core.load_log.append(
                        (op.address, bytes(line.data[off:off + op.size])))
                self.commit(hit)
                self.trace(TraceCategory.CACHE, "load hit 0x%x", op.address)
                return True
            if line is not None:  # LOADING: piggyback on the fetch in flight
                def merge():
                    core.l1_misses += 1
                    core.mem_requests += 1
                    core._outstanding += 1
                    line.waiters.append((op.address, op.size))
                self.commit(merge)
                self.trace(TraceCategory.CACHE, "load merge 0x%x", op.address)
                return True
            victim = self._pick_victim(set_idx)
            if victim is None:
                self.deadlock_write("no allocatable way in set %d", set_idx)
                return False
            tag_id = core._next_tag
            req = MemoryRequest(core.origin, MemoryOpKind.LOAD, base,
                                self.line_bytes, b"", tag_id)
            if not self.m_outgoing.push(req):
                self.deadlock_write("outgoing buffer full for 0x%x", op.address)
                return False

            def alloc():
                core.l1_misses += 1
                core.mem_requests += 1
                core._outstanding += 1
                core._next_tag += 1
                core._pending[tag_id] = base
                victim.tag = base
                victim.state = LineState.LOADING
                victim.dirty = False
                victim.data = bytearray(self.line_bytes)
                victim.waiters = [(op.address, op.size)]
                victim.pending = []
                self._victim_ptr[set_idx] = (victim.way + 1) % self.ways
            self.commit(alloc)
            self.trace(TraceCategory.CACHE, "load miss 0x%x, fetch line 0x%x",
                       op.address, base)
            return True

        # store: write-through, no write-allocate
        if line is not None and line.state is LineState.LOADING:
            self.deadlock_write("store 0x%x waits for a fetch in flight",
                                op.address)
            return False
        tag_id = core._next_tag
        req = MemoryRequest(core.origin, MemoryOpKind.STORE, op.address,
                            op.size, op.value, tag_id)
        if not self.m_outgoing.push(req):
            self.deadlock_write("outgoing buffer full for 0x%x", op.address)
            return False
        hit_full = line is not None

        def write():
            core.mem_requests += 1
            core._outstanding += 1
            core._next_tag += 1
            core._pending[tag_id] = None  # marks a store
            if hit_full:
                core.l1_hits += 1
                line.data[off:off + op.size] = op.value
            else:
                core.l1_misses += 1
        self.commit(write)
        self.trace(TraceCategory.CACHE, "store %s 0x%x",
                   "hit" if hit_full else "miss", op.address)
        return True

    # -- kernel processes -------------------------------------------------------

    def _do_outgoing(self):
        req = self.m_outgoing.front()
        if not self.port.request(req):
            self.deadlock_write("unable to send request for 0x%x", req.address)
            return FAILED
        self.m_outgoing.pop()
        return SUCCESS

    def _do_incoming(self):
        if not self.p_service.invoke():
            return FAILED
        resp = self.m_incoming.front()
        core = self.core

        def apply():
            if resp.kind is ResponseKind.STORE_ACK:
                core._pending.pop(resp.tag, None)
                core._outstanding -= 1
                core.stores_acked += 1
                return
            base = core._pending.pop(resp.tag)
            line = self._find_loading(base)
            line.data[:] = resp.data
            for addr, size in line.waiters:
                woff = addr - base
                core.load_log.append((addr, bytes(line.data[woff:woff + size])))
            core._outstanding -= len(line.waiters)
            line.waiters = []
            for poff, data in line.pending:
                line.data[poff:poff + len(data)] = data
            line.pending = []
            line.state = LineState.FULL
        self.commit(apply)
        self.trace(TraceCategory.CACHE, "complete tag %d", resp.tag)
        self.m_incoming.pop()
        return SUCCESS

    # -- write-update snooping (called by the memory system in Commit) -----------

    def snoop_update(self, address, data):
        if not self.committing:
            raise ContractViolation(
                "%s: snoop update outside the Commit phase" % self.path)
        base = address - address % self.line_bytes
        off = address - base
        _, line = self._locate(base)
        if line is None:
            return
        if line.state is LineState.FULL:
            line.data[off:off + len(data)] = data
        else:  # LOADING: hold the update until the fill lands
            line.pending.append((off, bytes(data)))


class Core(Component):
    """Issues a workload one op per core cycle through its L1."""

    COUNTER_NAMES = ("cycles", "ops_executed", "mem_requests",
                     "l1_hits", "l1_misses")

    def __init__(self, kernel, name, clock, origin, ops, max_outstanding=4,
                 l1_sets=16, l1_ways=4, line_bytes=64, pc_base=None):
        super().__init__(kernel, name, clock)
        if max_outstanding < 1:
            raise ConfigurationError(
                "%s: max_outstanding must be >= 1" % self.path)
        self.origin = origin
        self.max_outstanding = max_outstanding
        self.line_bytes = line_bytes
        self.pc_base = pc_base
        # performance counters
        self.ops_executed = 0
        self.mem_requests = 0
        self.l1_hits = 0
        self.l1_misses = 0
        # completion records
        self.load_log = []      # (address, value) in completion order
        self.counter_log = []   # (index, value or None) in issue order
        self.stores_acked = 0
        # issue state
        self._outstanding = 0
        self._delay_left = None
        self._halted = False
        self._next_tag = 0
        self._pending = {}      # tag -> line base for fills, None for stores
        self.box = self.buffer("ops", max(len(ops), 1), initial=ops)
        self.l1 = L1Cache(self, l1_sets, l1_ways, line_bytes,
                          outgoing_capacity=max_outstanding)
        self.issue_proc = self.add_process("issue", self.box, self._do_issue)
        # the client path outranks Incoming on the line arbitrator
        self.l1.p_service.register(self.issue_proc)

    def attach(self, memory):
        port = memory.connect(self.origin, self.l1.outgoing_proc,
                              snoop=self.l1.snoop_update)
        self.l1.bind(port)
        return self

    # -- counters ----------------------------------------------------------------

    @property
    def cycles(self):
        return self.clock.cycle_index(self.kernel.master_cycle)

    def counters(self):
        return {"cycles": self.cycles,
                "ops_executed": self.ops_executed,
                "mem_requests": self.mem_requests,
                "l1_hits": self.l1_hits,
                "l1_misses": self.l1_misses}

    def counter_value(self, index):
        return (self.cycles, self.ops_executed, self.mem_requests,
                self.l1_hits, self.l1_misses)[index]

    @property
    def outstanding(self):
        return self._outstanding

    @property
    def halted(self):
        return self._halted

    def inspect_state(self):
        return {"ops_executed": self.ops_executed,
                "mem_requests": self.mem_requests,
                "l1_hits": self.l1_hits,
                "l1_misses": self.l1_misses,
                "outstanding": self._outstanding,
                "delay_left": self._delay_left,
                "halted": self._halted,
                "next_tag": self._next_tag}

    # -- issue path -----------------------------------------------------------------

    def _count_op(self, extra=None):
        def bump():
            self.ops_executed += 1
            if extra is not None:
                extra()
        self.commit(bump)

    def _do_issue(self):
        op = self.box.front()
        kind = op.kind

        if kind is WorkloadOpKind.DELAY:
            left = self._delay_left if self._delay_left is not None else op.cycles
            if left > 1:
                def tick():
                    self._delay_left = left - 1
                self.commit(tick)
                return SUCCESS
            self.box.pop()
            self._count_op(lambda: setattr(self, "_delay_left", None))
            return SUCCESS

        if kind is WorkloadOpKind.HALT:
            self.box.pop()
            self.commit(lambda: setattr(self, "_halted", True))
            self.trace(TraceCategory.SIM, "halt")
            return SUCCESS

        if kind is WorkloadOpKind.READ_COUNTER:
            self.box.pop()
            index = op.counter
            value = self.counter_value(index) if 0 <= index < 5 else None
            self._count_op(lambda: self.counter_log.append((index, value)))
            self.trace(TraceCategory.SIM, "counter %d = %s", index, value)
            return SUCCESS

        if (kind is WorkloadOpKind.LOAD and self.pc_base is not None
                and self.pc_base <= op.address < self.pc_base + self.line_bytes):
            # performance-counter window: answered locally, bypasses the L1
            self.box.pop()
            offset = op.address - self.pc_base
            index = offset // 8
            if offset % 8 == 0 and index < 5:
                value = self.counter_value(index)
            else:
                value = None  # error response
            self._count_op(lambda: self.counter_log.append((index, value)))
            self.trace(TraceCategory.SIM, "counter load %d = %s", index, value)
            return SUCCESS

        # loads and stores through the L1
        if self._outstanding >= self.max_outstanding:
            self.deadlock_write("outstanding request limit (%d) reached",
                                self.max_outstanding)
            return FAILED
        if not self.l1.access(op):
            return FAILED
        self.box.pop()
        self._count_op()
        return SUCCESS
