"""Flat memory-system models: serial, parallel, banked and DDR.

All four models expose the same client contract: connect() returns a
MemoryPort whose request() call follows kernel claim semantics (call it the
same way in every phase; False means "refused, stall and retry"), and whose
`responses` buffer receives exactly one MemoryResponse per accepted request.
Stores are applied to the backing store when the request completes, and at
that moment snoop the L1 of every other connected core (write-update).
"""

from __future__ import annotations

from dataclasses import dataclass
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
from .selectors import BankSelector, SelectorKind, check_selector


def _pow2(n):
    return n > 0 and n & (n - 1) == 0


class MemoryOpKind(Enum):
    LOAD = auto()
    STORE = auto()


class ResponseKind(Enum):
    LOAD_DATA = auto()
    STORE_ACK = auto()
    ERROR = auto()


@dataclass(frozen=True)
class MemoryRequest:
    """One load or store travelling from a core into the memory system."""

    origin: int
    kind: MemoryOpKind
    address: int
    size: int
    data: bytes = b""
    tag: int = 0


@dataclass(frozen=True)
class MemoryResponse:
    tag: int
    origin: int
    kind: ResponseKind
    data: bytes = b""


@dataclass(frozen=True)
class DdrTiming:
    """Stage costs of the DDR pipeline, in memory-domain cycles."""

    activate_cycles: int = 5
    column_cycles: int = 5
    precharge_cycles: int = 5
    burst_cycles: int = 2

    def validate(self):
        for field in ("activate_cycles", "column_cycles",
                      "precharge_cycles", "burst_cycles"):
            if getattr(self, field) < 1:
                raise ConfigurationError("DdrTiming.%s must be >= 1" % field)


def check_request(req, line_bytes):
    """Reject requests that break the port contract."""
    if req.size < 1 or req.size > line_bytes:
        raise ContractViolation(
            "request tag %d: size %d outside [1, %d]"
            % (req.tag, req.size, line_bytes))
    if req.address % line_bytes + req.size > line_bytes:
        raise ContractViolation(
            "request tag %d: access 0x%x+%d crosses a cache line"
            % (req.tag, req.address, req.size))
    if req.kind is MemoryOpKind.STORE and len(req.data) != req.size:
        raise ContractViolation(
            "request tag %d: store carries %d bytes for size %d"
            % (req.tag, len(req.data), req.size))


class MainMemory:
    """Sparse byte-addressable backing store organised as cache lines."""

    def __init__(self, line_bytes=64):
        if not _pow2(line_bytes):
            raise ConfigurationError("line_bytes must be a power of two")
        self.line_bytes = line_bytes
        self._lines = {}

    def read(self, address, size):
        base = address - address % self.line_bytes
        line = self._lines.get(base)
        if line is None:
            return bytes(size)
        off = address - base
        return bytes(line[off:off + size])

    def write(self, address, data):
        base = address - address % self.line_bytes
        line = self._lines.get(base)
        if line is None:
            line = self._lines[base] = bytearray(self.line_bytes)
        off = address - base
        line[off:off + len(data)] = data

    def read_line(self, base):
        line = self._lines.get(base)
        return bytes(line) if line is not None else bytes(self.line_bytes)

    def __len__(self):
        return len(self._lines)


class MemoryPort:
    """Core-side handle to a memory system.

    request() must be called identically in every phase of a handler; a False
    answer means the submission lost arbitration or found a queue full, and
    the caller must return FAILED to retry next cycle.  Responses appear in
    `responses` one cycle after the memory delivers them.
    """

    __slots__ = ("origin", "responses", "_submit")

    def __init__(self, origin, responses, submit):
        self.origin = origin
        self.responses = responses
        self._submit = submit

    def request(self, req):
        if req.origin != self.origin:
            raise ContractViolation(
                "port of core %d used for request from core %d"
                % (self.origin, req.origin))
        return self._submit(req)


class _ServiceState:
    """Busy counter of one request handler."""

    __slots__ = ("remaining",)

    def __init__(self):
        self.remaining = None


class MemorySystem(Component):
    """Shared plumbing of the flat memory models."""

    def __init__(self, kernel, name, clock, line_bytes, response_capacity,
                 response_pushes=1):
        super().__init__(kernel, name, clock)
        if not _pow2(line_bytes):
            raise ConfigurationError(
                "%s: line_bytes must be a power of two" % name)
        self.line_bytes = line_bytes
        self.backing = MainMemory(line_bytes)
        self._response_capacity = response_capacity
        self._response_pushes = response_pushes
        self._snoops = []        # (origin, update callable)
        self._resp_buf = {}      # origin -> Buffer
        self.loads_done = 0
        self.stores_done = 0

    def connect(self, origin, process, snoop=None):
        raise NotImplementedError

    def inspect_state(self):
        return {"loads_done": self.loads_done, "stores_done": self.stores_done}

    # -- client plumbing -----------------------------------------------------

    def _add_client(self, origin, snoop):
        if origin in self._resp_buf:
            raise ConfigurationError(
                "%s: core %d connected twice" % (self.path, origin))
        buf = self.buffer("resp%d" % origin, self._response_capacity,
                          max_pushes_per_cycle=self._response_pushes)
        self._resp_buf[origin] = buf
        if snoop is not None:
            self._snoops.append((origin, snoop))
        return buf

    # -- completion ------------------------------------------------------------

    def _response_for(self, req):
        if req.kind is MemoryOpKind.LOAD:
            return MemoryResponse(req.tag, req.origin, ResponseKind.LOAD_DATA,
                                  self.backing.read(req.address, req.size))
        return MemoryResponse(req.tag, req.origin, ResponseKind.STORE_ACK)

    def _apply_completion(self, req):
        """Commit-phase bookkeeping for a finished request."""
        if req.kind is MemoryOpKind.STORE:
            self.backing.write(req.address, req.data)
            for origin, update in self._snoops:
                if origin != req.origin:
                    update(req.address, req.data)
            self.stores_done += 1
        else:
            self.loads_done += 1

    def _trace_done(self, req):
        self.trace(TraceCategory.MEM, "%s 0x%x size %d done, core %d tag %d",
                   "store" if req.kind is MemoryOpKind.STORE else "load",
                   req.address, req.size, req.origin, req.tag)

    # -- the serial request handler, shared by several models -----------------

    def _service_handler(self, queue, state, latency, deliver, after=None):
        """Build a fixed-latency request handler over `queue`.

        `deliver(req)` pushes the response along the right path and returns
        the claim answer; `after(req)` runs under commit on the completion
        cycle.
        """

        def handler():
            req = queue.front()
            remaining = state.remaining if state.remaining is not None else latency
            if remaining > 1:
                def tick():
                    state.remaining = remaining - 1
                self.commit(tick)
                return SUCCESS
            if not deliver(req):
                self.deadlock_write(
                    "response for core %d (tag %d) refused", req.origin, req.tag)
                return FAILED
            queue.pop()

            def done():
                self._apply_completion(req)
                if after is not None:
                    after(req)
                state.remaining = None
            self.commit(done)
            self._trace_done(req)
            return SUCCESS

        return handler


class SerialMemory(MemorySystem):
    """One shared request queue served by a single handler.

    With more than one core a request bus (cyclic arbitrated service) guards
    the queue, so at most one core enqueues per memory cycle.
    """

    def __init__(self, kernel, name, clock, cores, latency=10,
                 queue_capacity=16, line_bytes=64, response_capacity=8):
        super().__init__(kernel, name, clock, line_bytes, response_capacity)
        if cores < 1:
            raise ConfigurationError("%s: cores must be >= 1" % name)
        if latency < 1:
            raise ConfigurationError("%s: latency must be >= 1" % name)
        self.cores = cores
        self.latency = latency
        self._queue = self.buffer("requests", queue_capacity,
                                  max_pushes_per_cycle=cores)
        self._bus = (self.arbitrator("bus", Strategy.CYCLIC)
                     if cores > 1 else None)
        self._state = _ServiceState()
        deliver = lambda req: self._resp_buf[req.origin].push(self._response_for(req))
        self.add_process("service", self._queue,
                         self._service_handler(self._queue, self._state,
                                               latency, deliver))

    def inspect_state(self):
        st = super().inspect_state()
        st["remaining"] = self._state.remaining
        return st

    def connect(self, origin, process, snoop=None):
        if len(self._resp_buf) >= self.cores:
            raise ConfigurationError(
                "%s: more clients than the %d configured cores"
                % (self.path, self.cores))
        buf = self._add_client(origin, snoop)
        if self._bus is not None:
            self._bus.register(process)

        def submit(req):
            check_request(req, self.line_bytes)
            if self._bus is not None and not self._bus.invoke():
                return False
            return self._queue.push(req)

        return MemoryPort(origin, buf, submit)


class ParallelMemory(MemorySystem):
    """A private queue and request handler per core; no shared contention."""

    def __init__(self, kernel, name, clock, latency=10, queue_capacity=16,
                 line_bytes=64, response_capacity=8):
        super().__init__(kernel, name, clock, line_bytes, response_capacity)
        if latency < 1:
            raise ConfigurationError("%s: latency must be >= 1" % name)
        self.latency = latency
        self.queue_capacity = queue_capacity
        self._states = {}

    def inspect_state(self):
        st = super().inspect_state()
        for origin in sorted(self._states):
            st["remaining%d" % origin] = self._states[origin].remaining
        return st

    def connect(self, origin, process, snoop=None):
        buf = self._add_client(origin, snoop)
        queue = self.buffer("q%d" % origin, self.queue_capacity)
        state = _ServiceState()
        self._states[origin] = state
        deliver = lambda req: buf.push(self._response_for(req))
        self.add_process("service%d" % origin, queue,
                         self._service_handler(queue, state, self.latency,
                                               deliver))

        def submit(req):
            check_request(req, self.line_bytes)
            return queue.push(req)

        return MemoryPort(origin, buf, submit)


class _Bank(Component):
    """One bank: a guarded request queue and its fixed-latency handler."""

    def __init__(self, parent, index, queue_capacity, cores):
        super().__init__(parent, "bank%d" % index)
        self.index = index
        self.queue = self.buffer("queue", queue_capacity,
                                 max_pushes_per_cycle=cores)
        self.enqueue = (self.arbitrator("enqueue", Strategy.CYCLIC)
                        if cores > 1 else None)
        self.state = _ServiceState()
        self.accesses = 0

    def inspect_state(self):
        return {"remaining": self.state.remaining, "accesses": self.accesses}


class BankedMemory(MemorySystem):
    """Requests spread over several banks by an address selector.

    Each bank owns an arbitrated queue and serves requests with a fixed
    latency; responses return through a per-core arbitrated service, so each
    core receives at most one response per memory cycle.
    """

    def __init__(self, kernel, name, clock, cores, banks=None, latency=10,
                 queue_capacity=16, selector=None, line_bytes=64,
                 response_capacity=8):
        if cores < 1:
            raise ConfigurationError("%s: cores must be >= 1" % name)
        banks = cores if banks is None else banks
        if selector is None:
            selector = (SelectorKind.DIRECT_BINARY if _pow2(banks)
                        else SelectorKind.DIRECT)
        check_selector(selector, banks, line_bytes)
        super().__init__(kernel, name, clock, line_bytes, response_capacity,
                         response_pushes=banks)
        if latency < 1:
            raise ConfigurationError("%s: latency must be >= 1" % name)
        self.cores = cores
        self.latency = latency
        self.selector = selector
        self._resp_arb = {}
        self.banks = [_Bank(self, i, queue_capacity, cores)
                      for i in range(banks)]
        self._bank_procs = []
        for bank in self.banks:
            handler = self._make_bank_handler(bank)
            self._bank_procs.append(
                self.add_process("service%d" % bank.index, bank.queue, handler))

    def _make_bank_handler(self, bank):
        def deliver(req):
            if not self._resp_arb[req.origin].invoke():
                return False
            return self._resp_buf[req.origin].push(self._response_for(req))

        def count(req):
            bank.accesses += 1

        return self._service_handler(bank.queue, bank.state, self.latency,
                                     deliver, after=count)

    def connect(self, origin, process, snoop=None):
        if len(self._resp_buf) >= self.cores:
            raise ConfigurationError(
                "%s: more clients than the %d configured cores"
                % (self.path, self.cores))
        buf = self._add_client(origin, snoop)
        arb = self.arbitrator("respsel%d" % origin, Strategy.CYCLIC)
        for proc in self._bank_procs:
            arb.register(proc)
        self._resp_arb[origin] = arb
        for bank in self.banks:
            if bank.enqueue is not None:
                bank.enqueue.register(process)
        selector = BankSelector(self.selector, len(self.banks), self.line_bytes)

        def submit(req):
            check_request(req, self.line_bytes)
            bank = self.banks[selector.select(req.address)]
            if bank.enqueue is not None and not bank.enqueue.invoke():
                return False
            return bank.queue.push(req)

        return MemoryPort(origin, buf, submit)


class _DdrChannel(Component):
    """One DDR channel: request queue, pipeline state, in-flight buffer."""

    def __init__(self, parent, index, queue_capacity, cores, depth):
        super().__init__(parent, "channel%d" % index)
        self.index = index
        self.queue = self.buffer("queue", queue_capacity,
                                 max_pushes_per_cycle=cores)
        self.enqueue = (self.arbitrator("enqueue", Strategy.CYCLIC)
                        if cores > 1 else None)
        self.inflight = self.buffer("inflight", depth)
        self.open_row = None
        self.bus_free = 0
        self.accesses = 0

    def inspect_state(self):
        return {"open_row": self.open_row, "bus_free": self.bus_free,
                "accesses": self.accesses}


class DDRMemory(MemorySystem):
    """Channels that pipeline requests with open-row timing.

    An accept process schedules each request: a hit on the channel's open row
    costs column_cycles, a closed row adds activate_cycles, and a conflict
    adds precharge_cycles on top; the data burst then occupies the channel
    bus for burst_cycles, so completion times per channel never decrease.  A
    deliver process returns responses in completion order through a per-core
    arbitrated service.
    """

    def __init__(self, kernel, name, clock, cores, channels=None, timing=None,
                 selector=None, row_lines=128, queue_capacity=16,
                 line_bytes=64, response_capacity=8):
        if cores < 1:
            raise ConfigurationError("%s: cores must be >= 1" % name)
        channels = cores if channels is None else channels
        if selector is None:
            selector = (SelectorKind.DIRECT_BINARY if _pow2(channels)
                        else SelectorKind.DIRECT)
        check_selector(selector, channels, line_bytes)
        super().__init__(kernel, name, clock, line_bytes, response_capacity,
                         response_pushes=channels)
        timing = DdrTiming() if timing is None else timing
        timing.validate()
        if not _pow2(row_lines):
            raise ConfigurationError("%s: row_lines must be a power of two" % name)
        self.cores = cores
        self.timing = timing
        self.selector = selector
        self._line_shift = line_bytes.bit_length() - 1
        self._row_shift = row_lines.bit_length() - 1
        self._resp_arb = {}
        self.channels = [_DdrChannel(self, i, queue_capacity, cores,
                                     queue_capacity)
                         for i in range(channels)]
        self._deliver_procs = []
        for chan in self.channels:
            self.add_process("accept%d" % chan.index, chan.queue,
                             self._make_accept_handler(chan))
            self._deliver_procs.append(
                self.add_process("deliver%d" % chan.index, chan.inflight,
                                 self._make_deliver_handler(chan)))

    def _row_of(self, address):
        return address >> self._line_shift >> self._row_shift

    def _now(self):
        return self.clock.cycle_index(self.kernel.master_cycle)

    def _make_accept_handler(self, chan):
        t = self.timing

        def handler():
            req = chan.queue.front()
            row = self._row_of(req.address)
            if chan.open_row == row:
                latency = t.column_cycles
            elif chan.open_row is None:
                latency = t.activate_cycles + t.column_cycles
            else:
                latency = (t.precharge_cycles + t.activate_cycles
                           + t.column_cycles)
            completion = max(self._now() + latency, chan.bus_free) + t.burst_cycles
            if not chan.inflight.push((completion, req)):
                self.deadlock_write(
                    "channel %d pipeline full (tag %d)", chan.index, req.tag)
                return FAILED
            chan.queue.pop()

            def schedule():
                chan.open_row = row
                chan.bus_free = completion
                chan.accesses += 1
            self.commit(schedule)
            self.trace(TraceCategory.MEM,
                       "channel %d accepts 0x%x row %d, completes at %d",
                       chan.index, req.address, row, completion)
            return SUCCESS

        return handler

    def _make_deliver_handler(self, chan):
        def handler():
            completion, req = chan.inflight.front()
            if self._now() < completion:
                return SUCCESS  # hold without consuming
            if not self._resp_arb[req.origin].invoke():
                return FAILED
            if not self._resp_buf[req.origin].push(self._response_for(req)):
                self.deadlock_write(
                    "response for core %d (tag %d) refused", req.origin, req.tag)
                return FAILED
            chan.inflight.pop()
            self.commit(lambda: self._apply_completion(req))
            self._trace_done(req)
            return SUCCESS

        return handler

    def connect(self, origin, process, snoop=None):
        if len(self._resp_buf) >= self.cores:
            raise ConfigurationError(
                "%s: more clients than the %d configured cores"
                % (self.path, self.cores))
        buf = self._add_client(origin, snoop)
        arb = self.arbitrator("respsel%d" % origin, Strategy.CYCLIC)
        for proc in self._deliver_procs:
            arb.register(proc)
        self._resp_arb[origin] = arb
        for chan in self.channels:
            if chan.enqueue is not None:
                chan.enqueue.register(process)
        selector = BankSelector(self.selector, len(self.channels),
                                self.line_bytes)

        def submit(req):
            check_request(req, self.line_bytes)
            chan = self.channels[selector.select(req.address)]
            if chan.enqueue is not None and not chan.enqueue.invoke():
                return False
            return chan.queue.push(req)

        return MemoryPort(origin, buf, submit)
