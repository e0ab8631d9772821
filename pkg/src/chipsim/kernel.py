"""Process-network simulation kernel.

The kernel advances a single master cycle counter.  Clock domains are integer
dividers of the master clock; a process belongs to exactly one clock domain
and is re-evaluated on every cycle of that domain while it has work.

Every cycle runs in three phases over the same handler code:

  Acquire  - handlers run as if all arbitration succeeded; storage updates are
             recorded as claims but nothing is applied.
  Check    - handlers run again; Invoke now returns the arbitration outcome
             and a handler that loses a resource returns FAILED and stalls.
  Commit   - handlers of non-stalled processes run once more; commit-guarded
             internal updates apply now, storage updates become visible at the
             start of the next cycle.

Handlers must keep Acquire and Check free of side effects on model state;
with debug hashing enabled the kernel verifies this every cycle.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from enum import Enum, auto
from typing import Callable, Optional


class SimError(Exception):
    pass


class ConfigurationError(SimError):
    """Raised for invalid model construction or invalid configuration input."""


class ContractViolation(SimError):
    """Raised when handler code breaks a kernel usage rule at run time."""


class Phase(Enum):
    ACQUIRE = auto()
    CHECK = auto()
    COMMIT = auto()


class Result(Enum):
    SUCCESS = auto()
    FAILED = auto()


SUCCESS = Result.SUCCESS
FAILED = Result.FAILED


class ProcessState(Enum):
    IDLE = auto()
    RUNNING = auto()
    STALLED = auto()


class RunState(Enum):
    RUNNING = auto()
    HALTED = auto()
    DEADLOCK = auto()
    BREAKPOINT = auto()


@dataclass
class StepResult:
    state: RunState
    cycle: int
    report: Optional[str] = None


class Strategy(Enum):
    PRIORITY = auto()
    CYCLIC = auto()
    PRIORITY_CYCLIC = auto()


class TraceCategory(Enum):
    MEM = "m"
    NET = "n"
    DEADLOCK = "d"
    SIM = "s"
    CACHE = "c"

    @property
    def key(self):
        return self.value


_CATEGORY_BY_NAME = {c.name.lower(): c for c in TraceCategory}


def trace_category(name: str) -> TraceCategory:
    try:
        return _CATEGORY_BY_NAME[name.lower()]
    except KeyError:
        raise ConfigurationError("unknown trace category: %s" % name) from None


class Clock:
    """A clock domain: one cycle every `period` master cycles, offset `phase`."""

    def __init__(self, name, period=1, phase=0):
        if period < 1:
            raise ConfigurationError("clock %s: period must be >= 1" % name)
        if not 0 <= phase < period:
            raise ConfigurationError("clock %s: phase must be in [0, period)" % name)
        self.name = name
        self.period = period
        self.phase = phase
        self.processes = []  # registration order; fixed for determinism

    def due(self, master_cycle):
        return master_cycle % self.period == self.phase

    def cycle_index(self, master_cycle):
        """Number of this domain's cycles completed at `master_cycle`."""
        if master_cycle < self.phase:
            return 0
        return (master_cycle - self.phase) // self.period

    def __repr__(self):
        return "Clock(%s, period=%d, phase=%d)" % (self.name, self.period, self.phase)


class Process:
    """A cycle handler bound to a clock domain and a source storage."""

    __slots__ = (
        "component", "name", "handler", "source", "clock", "state",
        "_acq_failed", "_made_requests",
    )

    def __init__(self, component, name, source, clock, handler):
        self.component = component
        self.name = name
        self.handler = handler
        self.source = source
        self.clock = clock
        self.state = ProcessState.IDLE
        self._acq_failed = False
        self._made_requests = False

    @property
    def path(self):
        return "%s:%s" % (self.component.path, self.name)

    def __repr__(self):
        return "Process(%s, %s)" % (self.path, self.state.name)


@dataclass
class _Claim:
    process: Process
    kind: str
    value: object
    accepted: bool


class Storage:
    """Base for shared state with deferred-commit semantics.

    Reads always return the committed view.  Updates made during a cycle are
    recorded as claims and applied at the start of the next cycle; claims of
    processes that stalled are dropped.  The handler of one process runs up to
    three times per cycle, so claims recorded in the Acquire phase are replayed
    (same answers, no re-recording) in the Check and Commit phases.
    """

    def __init__(self, owner, name):
        self.owner = owner
        self.name = name
        self.kernel = owner.kernel
        self.path = "%s.%s" % (owner.path, name)
        self._sinks = []        # processes with this storage as source
        self._claims = []       # declaration order, current cycle
        self._by_proc = {}      # id(process) -> [claims]
        self._cursors = {}      # id(process) -> replay ordinal
        self._stamp = -1
        self._cursor_stamp = -1
        self.kernel._register_storage(self)

    # -- cycle bookkeeping -------------------------------------------------

    def _ensure_cycle(self):
        k = self.kernel
        if self._stamp != k._cycle_token:
            self._stamp = k._cycle_token
            self._claims = []
            self._by_proc = {}
            self._reset_cycle()
            k._touched.append(self)

    def _replay_answer(self, proc, kind):
        """Return the Acquire-phase answer for this process's next claim."""
        self._ensure_cycle()
        k = self.kernel
        if self._cursor_stamp != k._phase_token:
            self._cursor_stamp = k._phase_token
            self._cursors = {}
        lst = self._by_proc.get(id(proc))
        ordinal = self._cursors.get(id(proc), 0)
        if lst is None or ordinal >= len(lst):
            raise ContractViolation(
                "%s: %s on %s in %s phase was not declared during Acquire"
                % (proc.path, kind, self.path, k._phase.name))
        claim = lst[ordinal]
        if claim.kind != kind:
            raise ContractViolation(
                "%s: phase-divergent storage access on %s (%s vs %s)"
                % (proc.path, self.path, claim.kind, kind))
        self._cursors[id(proc)] = ordinal + 1
        return claim.accepted

    def _op(self, kind, value=None):
        k = self.kernel
        proc = k.current_process
        if proc is None:
            raise ContractViolation(
                "%s: %s outside of a process handler" % (self.path, kind))
        if k._phase is Phase.ACQUIRE:
            self._ensure_cycle()
            accepted = self._admit(kind, value, proc)
            claim = _Claim(proc, kind, value, accepted)
            self._claims.append(claim)
            self._by_proc.setdefault(id(proc), []).append(claim)
            return accepted
        return self._replay_answer(proc, kind)

    def _finalize_cycle(self, stalled):
        """Drop claims of stalled processes; report whether any remain."""
        if stalled:
            self._claims = [c for c in self._claims if c.process not in stalled]
        return bool(self._claims)

    def _digest_into(self, h):
        h.update(self._committed_repr().encode())

    # -- to be provided by subclasses ---------------------------------------

    def _reset_cycle(self):
        raise NotImplementedError

    def _admit(self, kind, value, proc):
        raise NotImplementedError

    def _apply(self):
        raise NotImplementedError

    def _empty_committed(self):
        raise NotImplementedError

    def _committed_repr(self):
        raise NotImplementedError

    def _wake_sinks(self):
        if not self._empty_committed():
            k = self.kernel
            for p in self._sinks:
                if p.state is ProcessState.IDLE:
                    p.state = ProcessState.RUNNING
                    k._n_active += 1

    def inspect_lines(self):
        return ["committed = %s" % self._committed_repr()]


class Buffer(Storage):
    """Bounded FIFO.  The only storage that may accept several same-cycle
    pushes (up to max_pushes_per_cycle, set at construction)."""

    def __init__(self, owner, name, capacity, max_pushes_per_cycle=1, initial=()):
        if capacity < 1:
            raise ConfigurationError("buffer %s: capacity must be >= 1" % name)
        if max_pushes_per_cycle < 1:
            raise ConfigurationError(
                "buffer %s: max_pushes_per_cycle must be >= 1" % name)
        super().__init__(owner, name)
        self.capacity = capacity
        self.max_pushes = max_pushes_per_cycle
        self._q = deque(initial)
        if len(self._q) > capacity:
            raise ConfigurationError("buffer %s: initial contents exceed capacity" % name)
        self.max_occupancy = len(self._q)
        self._accepted_pushes = 0
        self._claimed_pops = 0

    def _reset_cycle(self):
        self._accepted_pushes = 0
        self._claimed_pops = 0

    def _admit(self, kind, value, proc):
        if kind == "push":
            if (len(self._q) + self._accepted_pushes >= self.capacity
                    or self._accepted_pushes >= self.max_pushes):
                return False
            self._accepted_pushes += 1
            return True
        if kind == "probe":
            return not self._q and self._accepted_pushes == 0
        # pop
        if self._claimed_pops >= len(self._q):
            raise ContractViolation(
                "%s: pop on empty buffer %s"
                % (proc.path, self.path))
        self._claimed_pops += 1
        return True

    def push(self, value):
        """Queue an entry; False when rejected (caller should stall)."""
        return self._op("push", value)

    def vacant(self):
        """True when nothing is committed here and no push has been accepted
        this cycle.  The answer is recorded like a claim, so the Check and
        Commit replays observe exactly what Acquire observed."""
        return self._op("probe")

    def pop(self):
        """Remove the oldest committed entry at the start of the next cycle."""
        self._op("pop")

    def front(self):
        if not self._q:
            proc = self.kernel.current_process
            who = proc.path if proc is not None else "<no process>"
            raise ContractViolation("%s: front on empty buffer %s" % (who, self.path))
        return self._q[0]

    def empty(self):
        return not self._q

    def __len__(self):
        return len(self._q)

    def _apply(self):
        claims, self._claims = self._claims, []
        pops = 0
        for c in claims:
            if c.kind == "pop":
                pops += 1
        for _ in range(pops):
            self._q.popleft()
        for c in claims:
            if c.kind == "push" and c.accepted:
                self._q.append(c.value)
        if len(self._q) > self.max_occupancy:
            self.max_occupancy = len(self._q)
        self._wake_sinks()

    def _empty_committed(self):
        return not self._q

    def _committed_repr(self):
        return repr(list(self._q))

    def _digest_into(self, h):
        # Hashable entries are immutable, so their hash covers their content;
        # mutable entries fall back to full serialization.
        h.update(b"%d;" % len(self._q))
        for e in self._q:
            try:
                h.update(b"%x;" % (hash(e) & 0xFFFFFFFFFFFFFFFF))
            except TypeError:
                h.update(repr(e).encode())

    def inspect_lines(self):
        return [
            "occupancy = %d/%d" % (len(self._q), self.capacity),
            "max_occupancy = %d" % self.max_occupancy,
            "entries = %s" % self._committed_repr(),
        ]


class Register(Storage):
    """Single full/empty cell.  One update per cycle; later writers lose."""

    def __init__(self, owner, name, initial=None):
        super().__init__(owner, name)
        self._full = initial is not None
        self._value = initial
        self._claimed_update = False

    def _reset_cycle(self):
        self._claimed_update = False

    def _admit(self, kind, value, proc):
        if self._claimed_update:
            return False
        self._claimed_update = True
        return True

    def write(self, value):
        return self._op("write", value)

    def clear(self):
        return self._op("clear")

    def read(self):
        if not self._full:
            proc = self.kernel.current_process
            who = proc.path if proc is not None else "<no process>"
            raise ContractViolation("%s: read on empty register %s" % (who, self.path))
        return self._value

    def full(self):
        return self._full

    def _apply(self):
        claims, self._claims = self._claims, []
        for c in claims:
            if not c.accepted:
                continue
            if c.kind == "write":
                self._full = True
                self._value = c.value
            else:
                self._full = False
                self._value = None
        self._wake_sinks()

    def _empty_committed(self):
        return not self._full

    def _committed_repr(self):
        return repr((self._full, self._value))

    def inspect_lines(self):
        if self._full:
            return ["state = full", "value = %r" % (self._value,)]
        return ["state = empty"]


class SingleFlag(Storage):
    """One bit with deferred set/clear; one update per cycle."""

    def __init__(self, owner, name, initial=False):
        super().__init__(owner, name)
        self._set = bool(initial)
        self._claimed_update = False

    def _reset_cycle(self):
        self._claimed_update = False

    def _admit(self, kind, value, proc):
        if self._claimed_update:
            return False
        self._claimed_update = True
        return True

    def set(self):
        return self._op("set")

    def clear(self):
        return self._op("clear")

    def is_set(self):
        return self._set

    def _apply(self):
        claims, self._claims = self._claims, []
        for c in claims:
            if c.accepted:
                self._set = c.kind == "set"
        self._wake_sinks()

    def _empty_committed(self):
        return not self._set

    def _committed_repr(self):
        return repr(self._set)

    def inspect_lines(self):
        return ["set = %s" % self._set]


class Arbitrator:
    """Single-grant circuit shared by several processes.

    Processes request during Acquire by calling invoke(); the kernel resolves
    all arbitrations between the Acquire and Check phases, and invoke() then
    reports the outcome during Check.
    """

    def __init__(self, owner, name, strategy):
        self.owner = owner
        self.name = name
        self.kernel = owner.kernel
        self.path = "%s.%s" % (owner.path, name)
        self.strategy = strategy
        self._heads = []       # fixed-priority members, in priority order
        self._tail = []        # cyclic members
        self._members = set()
        self._next = 0
        self._requests = []
        self._requested = set()
        self._stamp = -1
        self._grant = None
        self.grants = 0
        self.kernel._register_arbiter(self)

    def register(self, process, cyclic=None):
        if self.strategy is Strategy.PRIORITY_CYCLIC:
            if cyclic is None:
                raise ConfigurationError(
                    "%s: PriorityCyclic members must state cyclic=True/False" % self.path)
        else:
            cyclic = self.strategy is Strategy.CYCLIC
        if process in self._members:
            raise ConfigurationError("%s: %s registered twice" % (self.path, process.path))
        if cyclic:
            self._tail.append(process)
        else:
            if self._tail:
                raise ConfigurationError(
                    "%s: fixed-priority members must be registered before the"
                    " cyclic group" % self.path)
            self._heads.append(process)
        self._members.add(process)

    def invoke(self):
        k = self.kernel
        proc = k.current_process
        if proc is None or proc not in self._members:
            raise ConfigurationError(
                "%s: invoke from unregistered process %s"
                % (self.path, proc.path if proc else "<none>"))
        if k._phase is Phase.ACQUIRE:
            if self._stamp != k._cycle_token:
                self._stamp = k._cycle_token
                self._requests = []
                self._requested = set()
                k._pending_arbiters.append(self)
            if proc not in self._requested:
                self._requested.add(proc)
                self._requests.append(proc)
            proc._made_requests = True
            return True
        if k._phase is Phase.CHECK:
            return self._grant is proc
        return True  # Commit: the chosen control path is replayed

    def _resolve(self):
        reqs = [p for p in self._requests if not p._acq_failed]
        self._grant = None
        if not reqs:
            return
        reqset = set(reqs)
        for m in self._heads:
            if m in reqset:
                self._grant = m
                self.grants += 1
                return
        n = len(self._tail)
        for i in range(n):
            idx = (self._next + i) % n
            if self._tail[idx] in reqset:
                self._grant = self._tail[idx]
                self._next = (idx + 1) % n
                self.grants += 1
                return

    def inspect_lines(self):
        return ["strategy = %s" % self.strategy.name,
                "grants = %d" % self.grants]


class ArbitratedPort:
    """A bank of independently arbitrated entries.

    Same-cycle requests to different entries never contend; requests to the
    same entry are resolved by that entry's own arbitration state.
    """

    def __init__(self, owner, name, entries, strategy):
        if entries < 1:
            raise ConfigurationError("port %s: entries must be >= 1" % name)
        self.owner = owner
        self.name = name
        self.kernel = owner.kernel
        self.path = "%s.%s" % (owner.path, name)
        self.entries = entries
        self.strategy = strategy
        self._members = []
        self._member_set = set()
        self._next = [0] * entries
        self._requests = {}    # index -> [processes]
        self._requested = set()  # (index, process)
        self._grants = {}      # index -> process
        self._stamp = -1
        self.kernel._register_arbiter(self)

    def register(self, process):
        if process in self._member_set:
            raise ConfigurationError("%s: %s registered twice" % (self.path, process.path))
        self._members.append(process)
        self._member_set.add(process)

    def invoke(self, index):
        k = self.kernel
        proc = k.current_process
        if proc is None or proc not in self._member_set:
            raise ConfigurationError(
                "%s: invoke from unregistered process %s"
                % (self.path, proc.path if proc else "<none>"))
        if not 0 <= index < self.entries:
            raise ContractViolation(
                "%s: entry index %d out of range [0, %d)"
                % (self.path, index, self.entries))
        if k._phase is Phase.ACQUIRE:
            if self._stamp != k._cycle_token:
                self._stamp = k._cycle_token
                self._requests = {}
                self._requested = set()
                self._grants = {}
                k._pending_arbiters.append(self)
            key = (index, proc)
            if key not in self._requested:
                self._requested.add(key)
                self._requests.setdefault(index, []).append(proc)
            proc._made_requests = True
            return True
        if k._phase is Phase.CHECK:
            return self._grants.get(index) is proc
        return True

    def _resolve(self):
        self._grants = {}
        for index, plist in self._requests.items():
            reqs = [p for p in plist if not p._acq_failed]
            if not reqs:
                continue
            reqset = set(reqs)
            if self.strategy is Strategy.PRIORITY:
                for m in self._members:
                    if m in reqset:
                        self._grants[index] = m
                        break
            else:  # cyclic per entry
                n = len(self._members)
                start = self._next[index]
                for i in range(n):
                    idx = (start + i) % n
                    if self._members[idx] in reqset:
                        self._grants[index] = self._members[idx]
                        self._next[index] = (idx + 1) % n
                        break

    def inspect_lines(self):
        return ["entries = %d" % self.entries,
                "strategy = %s" % self.strategy.name]


class Component:
    """A named node in the model tree.  Processes, storages and arbitrators
    are created through their owning component, which fixes their paths."""

    def __init__(self, parent, name, clock=None):
        if isinstance(parent, Kernel):
            self.kernel = parent
            self.parent = None
            self.path = name
        else:
            self.kernel = parent.kernel
            self.parent = parent
            self.path = "%s.%s" % (parent.path, name)
        self.name = name
        self.clock = clock if clock is not None else (
            parent.clock if isinstance(parent, Component) else None)
        self.kernel._register_component(self)

    # construction helpers

    def add_process(self, name, source, handler, clock=None):
        return self.kernel._register_process(
            self, name, source, clock or self.clock, handler)

    def buffer(self, name, capacity, max_pushes_per_cycle=1, initial=()):
        return Buffer(self, name, capacity, max_pushes_per_cycle, initial)

    def register_cell(self, name, initial=None):
        return Register(self, name, initial)

    def flag(self, name, initial=False):
        return SingleFlag(self, name, initial)

    def arbitrator(self, name, strategy):
        return Arbitrator(self, name, strategy)

    def arbitrated_port(self, name, entries, strategy):
        return ArbitratedPort(self, name, entries, strategy)

    # handler-side helpers

    def commit(self, action):
        """Run `action` during the Commit phase only."""
        if self.kernel._phase is Phase.COMMIT:
            action()

    @property
    def committing(self):
        return self.kernel._phase is Phase.COMMIT

    def trace(self, category, fmt, *args):
        self.kernel._trace_event(self, category, fmt, args)

    def deadlock_write(self, fmt, *args):
        self.kernel._deadlock_write(self, fmt, args)

    def inspect_state(self):
        """Ordered mapping of the component's registered model state."""
        return {}

    def inspect_lines(self):
        return ["%s = %r" % (k, v) for k, v in self.inspect_state().items()]


class Kernel:
    """Owns the master cycle counter and drives all processes."""

    def __init__(self):
        self.master_cycle = 0
        self.current_process: Optional[Process] = None
        self._phase = None
        self._clocks = []
        self._clock_names = {}
        self._processes = []
        self._proc_names = set()
        self._components = []
        self._storages = []
        self._arbiters = []
        self._by_path = {}
        self._pending_arbiters = []
        self._touched = []
        self._dirty = []
        self._cycle_token = 0
        self._phase_token = 0
        self._n_active = 0
        self._n_stalled = 0
        self._started = False
        self._deadlocked = False
        self._deadlock_report = None
        self._capture_deadlock = False
        self._deadlock_messages = []
        self.breakpoints = set()
        self._purity = False
        # tracing
        self.trace_sink = None
        self.enabled_categories = set()
        self.format_calls = 0
        # monitoring
        self.published = {}

    # -- construction --------------------------------------------------------

    def clock(self, name, period=1, phase=0):
        if name in self._clock_names:
            raise ConfigurationError("duplicate clock name: %s" % name)
        c = Clock(name, period, phase)
        self._clocks.append(c)
        self._clock_names[name] = c
        return c

    def _register_component(self, comp):
        if comp.path in self._by_path:
            raise ConfigurationError("duplicate component path: %s" % comp.path)
        self._components.append(comp)
        self._by_path[comp.path] = comp

    def _register_storage(self, storage):
        if storage.path in self._by_path:
            raise ConfigurationError("duplicate storage path: %s" % storage.path)
        self._storages.append(storage)
        self._by_path[storage.path] = storage

    def _register_arbiter(self, arb):
        if arb.path in self._by_path:
            raise ConfigurationError("duplicate arbiter path: %s" % arb.path)
        self._arbiters.append(arb)
        self._by_path[arb.path] = arb

    def _register_process(self, component, name, source, clock, handler):
        if clock is None:
            raise ConfigurationError(
                "%s:%s has no clock (set one on the component or pass clock=)"
                % (component.path, name))
        if not isinstance(source, Storage):
            raise ConfigurationError(
                "%s:%s source must be a storage" % (component.path, name))
        key = (component.path, name)
        if key in self._proc_names:
            raise ConfigurationError(
                "duplicate process name %s under %s" % (name, component.path))
        self._proc_names.add(key)
        p = Process(component, name, source, clock, handler)
        self._processes.append(p)
        clock.processes.append(p)
        source._sinks.append(p)
        if self._started:
            # late registration: activate immediately if there is work
            if not source._empty_committed():
                p.state = ProcessState.RUNNING
                self._n_active += 1
        return p

    def publish(self, name, getter: Callable[[], int]):
        """Expose a counter to asynchronous monitoring by name."""
        if name in self.published:
            raise ConfigurationError("duplicate published counter: %s" % name)
        self.published[name] = getter

    def enable_purity_check(self):
        self._purity = True

    # -- tracing ---------------------------------------------------------------

    def set_trace(self, sink, categories=()):
        self.trace_sink = sink
        self.enabled_categories = set(categories)

    def enable_category(self, category):
        self.enabled_categories.add(category)

    def disable_category(self, category):
        self.enabled_categories.discard(category)

    def _format_event(self, cycle, component, process, key, text):
        self.format_calls += 1
        return "[%08d:%s] (%s:%s) %s %s" % (
            cycle, component.path, process.component.path, process.name, key, text)

    def _trace_event(self, component, category, fmt, args):
        if self._phase is not Phase.COMMIT:
            return
        if category not in self.enabled_categories or self.trace_sink is None:
            return
        text = fmt % args if args else fmt
        line = self._format_event(
            self.master_cycle, component, self.current_process, category.key, text)
        self.trace_sink.write(line + "\n")

    def _deadlock_write(self, component, fmt, args):
        if not self._capture_deadlock:
            return
        text = fmt % args if args else fmt
        self._deadlock_messages.append((component, self.current_process, text))

    # -- inspection -------------------------------------------------------------

    def find(self, path):
        return self._by_path.get(path)

    def inspect(self, path):
        obj = self.find(path)
        if obj is None:
            return "no such path: %s" % path
        lines = ["%s:" % path]
        lines += ["  " + l for l in obj.inspect_lines()]
        return "\n".join(lines)

    def paths(self):
        return sorted(self._by_path)

    # -- execution ---------------------------------------------------------------

    def _ensure_started(self):
        if self._started:
            return
        self._started = True
        for p in self._processes:
            if not p.source._empty_committed():
                p.state = ProcessState.RUNNING
                self._n_active += 1

    def _commit_pending(self):
        dirty, self._dirty = self._dirty, []
        for s in dirty:
            s._apply()

    def _run_handler(self, p):
        self.current_process = p
        try:
            r = p.handler()
        finally:
            self.current_process = None
        if r is not SUCCESS and r is not FAILED:
            raise ContractViolation(
                "%s: handler returned %r instead of SUCCESS/FAILED" % (p.path, r))
        return r

    def _state_digest(self):
        h = hashlib.blake2b(digest_size=16)
        for c in self._components:
            h.update(c.path.encode())
            h.update(repr(c.inspect_state()).encode())
        for s in self._storages:
            h.update(s.path.encode())
            s._digest_into(h)
        return h.digest()

    def _purity_pair(self, before, after, phase_name):
        if before != after:
            raise ContractViolation(
                "phase purity violated during %s of cycle %d"
                % (phase_name, self.master_cycle))

    def _run_cycle(self):
        master = self.master_cycle
        self._cycle_token += 1
        runnables = []
        for clock in self._clocks:
            if master % clock.period != clock.phase:
                continue
            for p in clock.processes:
                st = p.state
                if st is ProcessState.STALLED:
                    runnables.append(p)
                elif st is ProcessState.RUNNING:
                    if p.source._empty_committed():
                        p.state = ProcessState.IDLE
                        self._n_active -= 1
                    else:
                        runnables.append(p)

        purity = self._purity
        if purity:
            d = self._state_digest()

        # Acquire
        self._phase = Phase.ACQUIRE
        self._phase_token += 1
        for p in runnables:
            p._acq_failed = False
            p._made_requests = False
            if self._run_handler(p) is FAILED:
                p._acq_failed = True
        if purity:
            d2 = self._state_digest()
            self._purity_pair(d, d2, "Acquire")

        # Resolve arbitration
        self._phase = None
        pending, self._pending_arbiters = self._pending_arbiters, []
        for a in pending:
            a._resolve()

        # Check (resolution touches only arbiter-internal state, so the
        # post-Acquire digest doubles as the pre-Check baseline)
        if purity:
            d = d2
        self._phase = Phase.CHECK
        self._phase_token += 1
        stalled_now = set()
        committers = []
        for p in runnables:
            if p._acq_failed:
                stalled_now.add(p)
            elif p._made_requests:
                if self._run_handler(p) is FAILED:
                    stalled_now.add(p)
                else:
                    committers.append(p)
            else:
                committers.append(p)  # grant-free handlers cannot diverge
        if purity:
            d2 = self._state_digest()
            self._purity_pair(d, d2, "Check")

        # Commit
        self._phase = Phase.COMMIT
        self._phase_token += 1
        for p in committers:
            if self._run_handler(p) is FAILED:
                raise ContractViolation(
                    "%s: handler failed during Commit after passing Check" % p.path)
        self._phase = None

        # Finalize process states and storage claims
        for p in stalled_now:
            if p.state is not ProcessState.STALLED:
                p.state = ProcessState.STALLED
                self._n_stalled += 1
        for p in committers:
            if p.state is ProcessState.STALLED:
                p.state = ProcessState.RUNNING
                self._n_stalled -= 1
        touched, self._touched = self._touched, []
        for s in touched:
            if s._finalize_cycle(stalled_now):
                self._dirty.append(s)

        if self._n_active > 0 and self._n_stalled == self._n_active:
            self._deadlocked = True

    def step(self, max_cycles=None):
        """Advance the simulation; returns on halt, deadlock, breakpoint or
        after max_cycles."""
        self._ensure_started()
        ran = 0
        while max_cycles is None or ran < max_cycles:
            if self._deadlocked:
                return StepResult(RunState.DEADLOCK, self.master_cycle,
                                  self._deadlock_report)
            if self.breakpoints and self.master_cycle in self.breakpoints:
                self.breakpoints.discard(self.master_cycle)
                return StepResult(RunState.BREAKPOINT, self.master_cycle)
            self._commit_pending()
            if self._n_active == 0:
                return StepResult(RunState.HALTED, self.master_cycle)
            self._run_cycle()
            ran += 1
            if self._deadlocked:
                self._deadlock_report = self._build_deadlock_report()
                return StepResult(RunState.DEADLOCK, self.master_cycle,
                                  self._deadlock_report)
            self.master_cycle += 1
        return StepResult(RunState.RUNNING, self.master_cycle)

    def run(self):
        return self.step(None)

    # -- deadlock reporting -------------------------------------------------------

    def _build_deadlock_report(self):
        stalled = [p for p in self._processes if p.state is ProcessState.STALLED]
        idle = sum(1 for p in self._processes if p.state is ProcessState.IDLE)

        # Replay pass: re-run Acquire to rebuild the claim logs, then Check
        # with message capture on.  Arbitration grants are left untouched, so
        # each handler retraces the control path on which it stalled.  Nothing
        # is committed: replay claims are dropped wholesale below.
        self._cycle_token += 1
        self._deadlock_messages = []
        for capture, phase in ((False, Phase.ACQUIRE), (True, Phase.CHECK)):
            self._phase = phase
            self._phase_token += 1
            self._capture_deadlock = capture
            for p in stalled:
                p._acq_failed = False
                p._made_requests = False
                try:
                    self._run_handler(p)
                except ContractViolation:
                    pass  # diagnostics must not abort the report
        self._capture_deadlock = False
        self._phase = None
        self._touched = []

        lines = [
            "deadlock detected at cycle %d: %d stalled, %d idle"
            % (self.master_cycle, len(stalled), idle)
        ]
        reported = set()
        for component, proc, text in self._deadlock_messages:
            reported.add(proc)
            lines.append(self._format_event(
                self.master_cycle, component, proc, TraceCategory.DEADLOCK.key, text))
        for p in stalled:
            if p not in reported:
                lines.append(self._format_event(
                    self.master_cycle, p.component, p,
                    TraceCategory.DEADLOCK.key, "stalled (no diagnostic)"))
        return "\n".join(lines)
