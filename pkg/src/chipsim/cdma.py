"""Ring-based cache-diffusion memory system.

Attraction caches keep whole lines close to the cores that use them; root
directories count the cached copies of every line and bridge the ring to
backing DDR; on stacked topologies each local ring additionally has a
partial directory that inventories the lines present in that ring and gates
traffic between its ring and the global ring.

The message protocol implemented here:

* A load miss allocates a Loading line (evicting the least recently used
  full, unpinned way first) and sends a ReadRequest around the ring.  The
  first attraction cache holding the line Full copies its bytes into the
  request and marks it satisfied.  The line's responsible root directory
  converts a satisfied request into a ReadResponse toward the requester and
  counts the new copy; an unsatisfied request is forwarded while copies
  exist (count > 0) and otherwise answered from DDR by an injected response.
  A second miss on a line already Loading merges into its waiter list.

* A store is write-allocate: once the line is Full locally the cache
  applies the bytes, marks the line dirty, pins it, and emits a
  WriteUpdate.  The update is inert until it passes the responsible
  directory, which stamps it with the line's next sequence number; from
  that point ring order is the serialization order of writes to the line.
  Every cache applies a stamped update to a matching Full copy (Loading
  copies queue it and apply it after the fill) and relays it to the L1
  caches of its cores.  The update completes the writer's store when it
  first returns to the writer and dies there on its second pass, unpinning
  the line.  Nodes between the writer and the directory see a stamped
  update once; nodes between the directory and the writer see it twice and
  apply only the first passage, so every node observes the same per-line
  write order.

* An eviction frees the way at once and sends an Evict to the responsible
  root (carrying the line's bytes when dirty).  The root decrements its
  count and writes dirty data whose sequence stamp is not older than what
  it last wrote, so a late clean eviction cannot erase an earlier write.
  DDR work is modelled by a per-root fixed-latency pipeline whose write
  completions surface as WritebackAck records.

* Partial directories escalate unsatisfied requests, fresh write updates,
  and dirty or last-copy evictions to the global ring; satisfied local
  requests convert locally and never leave the ring.  Global read traffic
  detours through rings whose partial count is positive, and stamped write
  updates are copied into every local ring so all copies and L1s are
  reached.

Messages advance one link per ring cycle when the next link buffer has
space.  New messages enter a ring only through an empty out-link, which
keeps at least one slot free ring-wide and rules out circular backpressure
deadlocks; forwarding needs only a single free slot.
"""

from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum, auto

from .core import LineState
from .kernel import (Component, ConfigurationError, ContractViolation,
                     Strategy, TraceCategory, FAILED, SUCCESS)
from .memory import (MainMemory, MemoryOpKind, MemoryPort, MemoryResponse,
                     ResponseKind, check_request)
from .selectors import BankSelector, SelectorKind


class MessageKind(Enum):
    READ_REQUEST = auto()
    READ_RESPONSE = auto()
    WRITE_UPDATE = auto()
    EVICT = auto()
    RING_JOIN = auto()
    WRITEBACK_ACK = auto()


@dataclass(frozen=True)
class RingMessage:
    """One ring packet.  Instances are immutable; every state transition
    pops the old message and pushes a replacement."""

    kind: MessageKind
    line: int                   # line base address
    node: int = -1              # requester (reads) or writer (updates)
    ident: tuple = ()           # unique identity, assigned at creation
    data: bytes = b""           # line payload / update bytes / dirty evict
    offset: int = 0             # byte offset of a WriteUpdate in its line
    dirty: bool = False
    satisfied: bool = False
    ordered: bool = False       # WriteUpdate passed its responsible root
    acked: bool = False         # WriteUpdate returned to the writer once
    seq: int = 0                # per-line write serial number
    entry_pos: int = -1         # ring position where this copy was stamped
    last_copy: bool = True      # Evict: the covered segment lost its last copy
    fulfills: tuple = ()        # ReadRequest identities a response answers

    def describe(self):
        return "%s(%s) line=0x%x" % (self.kind.name, self.ident, self.line)


class _IdSource:
    """Deterministic message-identity counter, advanced under commit."""

    __slots__ = ("base", "n")

    def __init__(self, base):
        self.base = base
        self.n = 0

    def peek(self):
        return self.base + (self.n,)

    def bump(self):
        self.n += 1


class _SvcState:
    """Busy counter of a request service."""

    __slots__ = ("remaining",)

    def __init__(self):
        self.remaining = None


class _AcLine:
    """One attraction-cache way."""

    __slots__ = ("way", "tag", "state", "dirty", "data", "seq", "pins",
                 "waiters", "pending", "stamp")

    def __init__(self, way, line_bytes):
        self.way = way
        self.tag = None
        self.state = LineState.EMPTY
        self.dirty = False
        self.data = bytearray(line_bytes)
        self.seq = 0
        self.pins = 0           # outstanding stores; pinned lines stay put
        self.waiters = []       # (origin, tag, address, size) awaiting fill
        self.pending = []       # (offset, bytes, seq) stamped mid-Loading
        self.stamp = 0          # recency for LRU victims

    def snapshot(self):
        return (self.tag, self.state.name, self.dirty, self.seq, self.pins,
                bytes(self.data), len(self.waiters), len(self.pending),
                self.stamp)


class _Ring:
    """Bookkeeping for one ring: node order and hop counter."""

    def __init__(self, name):
        self.name = name
        self.nodes = []
        self.pos_of = {}        # node id -> position
        self.hops = 0

    def add(self, node):
        self.pos_of[node.node_id] = len(self.nodes)
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def dist(self, src, dst):
        return (dst - src) % len(self.nodes)


class _DirEntry:
    """Root-directory record for one line."""

    __slots__ = ("count", "rings", "inflight")

    def __init__(self):
        self.count = 0          # cached copies (single ring)
        self.rings = set()      # local rings holding the line (stacked)
        self.inflight = 0       # responses sent but not yet acknowledged

    def holders(self, stacked):
        return len(self.rings) + self.inflight if stacked else self.count


@dataclass(frozen=True)
class _DdrJob:
    """One slot of a root's DDR pipeline."""

    ready: int                  # ring cycle the device is done
    line: int
    kind: MessageKind           # READ_RESPONSE to inject, WRITEBACK_ACK to log


def line_to_root(line_base, line_bytes, roots):
    """Stripe a line over the available root directories."""
    if roots < 1:
        raise ConfigurationError("at least one root directory is required")
    return (line_base // line_bytes) % roots


class _RingNode(Component):
    """Common plumbing of every ring member: the incoming link buffer and
    a reference to the next node's link."""

    def __init__(self, parent, name, clock, node_id, link_capacity):
        super().__init__(parent, name, clock)
        self.system = parent
        self.node_id = node_id
        self.link = self.buffer("link", link_capacity, max_pushes_per_cycle=2)
        self.out = None         # next node's in-link, set when the ring closes
        self.ring = None        # _Ring this node's out-link belongs to
        self.ring_pos = None

    # -- shared helpers --------------------------------------------------------

    def _forward(self, msg):
        """Relay `msg` one link onward; False asks the caller to stall."""
        return self.out.push(msg)

    def _inject(self, msg):
        """Enter a new message into the ring.  Injections require a vacant
        out-link (nothing committed, nothing accepted this cycle) so that
        the ring as a whole always keeps a free slot to rotate into."""
        if not self.out.vacant():
            return False
        return self.out.push(msg)

    def _count_hop(self, n=1):
        ring = self.ring

        def bump():
            ring.hops += n
        self.commit(bump)


class AttractionCache(_RingNode):
    """A set-associative cache shared by one or more cores and joined to
    the ring; misses attract whole lines from other caches or DDR."""

    def __init__(self, parent, index, node_id, clock, *, max_cores, sets,
                 ways, line_bytes, selector_kind, hit_latency, link_capacity,
                 queue_capacity, response_capacity):
        super().__init__(parent, "ac%d" % index, clock, node_id, link_capacity)
        if ways < 1:
            raise ConfigurationError("%s: ways must be >= 1" % self.path)
        if hit_latency < 1:
            raise ConfigurationError("%s: hit latency must be >= 1" % self.path)
        self.index = index
        self.max_cores = max_cores
        self.sets = sets
        self.ways = ways
        self.line_bytes = line_bytes
        self.hit_latency = hit_latency
        self.response_capacity = response_capacity
        self.selector = BankSelector(selector_kind, sets, line_bytes)
        self._lines = [[_AcLine(w, line_bytes) for w in range(ways)]
                       for _ in range(sets)]
        self._stamp = 0
        self._svc = _SvcState()
        self._resp_buf = {}
        self._snoops = []       # (origin, update_fn)
        self._store_acks = {}   # update ident -> (origin, tag)
        self.requests = self.buffer("requests", queue_capacity,
                                    max_pushes_per_cycle=max_cores)
        self._bus = (self.arbitrator("bus", Strategy.CYCLIC)
                     if max_cores > 1 else None)
        self._ids = _IdSource((node_id, 0))
        self.hits = 0
        self.misses = 0
        self.merges = 0
        self.evictions = 0
        self.fills = 0
        self.service_proc = self.add_process("service", self.requests,
                                             self._service_handler)
        self.ring_proc = self.add_process("ring", self.link,
                                          self._ring_handler)

    # -- construction-time wiring ----------------------------------------------

    def connect_core(self, origin, process, snoop=None):
        if len(self._resp_buf) >= self.max_cores:
            raise ConfigurationError(
                "%s: more clients than the %d configured cores"
                % (self.path, self.max_cores))
        if origin in self._resp_buf:
            raise ConfigurationError(
                "%s: core %d connected twice" % (self.path, origin))
        # The ring fill/ack process and the request service may both answer
        # the same core in one cycle.
        buf = self.buffer("resp%d" % origin, self.response_capacity,
                          max_pushes_per_cycle=2)
        self._resp_buf[origin] = buf
        if snoop is not None:
            self._snoops.append((origin, snoop))
        if self._bus is not None:
            self._bus.register(process)

        def submit(req):
            check_request(req, self.line_bytes)
            if self._bus is not None and not self._bus.invoke():
                return False
            return self.requests.push(req)

        return MemoryPort(origin, buf, submit)

    # -- lookup ------------------------------------------------------------------

    def _lookup(self, base):
        group = self._lines[self.selector.select(base)]
        for line in group:
            if line.tag == base and line.state is not LineState.EMPTY:
                return line
        return None

    def _pick_victim(self, base):
        group = self._lines[self.selector.select(base)]
        for line in group:
            if line.state is LineState.EMPTY:
                return line
        best = None
        for line in group:
            if line.state is LineState.FULL and line.pins == 0:
                if best is None or line.stamp < best.stamp:
                    best = line
        return best

    def _touch(self, line):
        self._stamp += 1
        line.stamp = self._stamp

    def _fill_arriving(self, base):
        """True when the ring port holds our fill for `base` at its front."""
        if self.link.empty():
            return False
        m = self.link.front()
        return (m.kind is MessageKind.READ_RESPONSE
                and m.node == self.node_id and m.line == base)

    def _snoop_cores(self, address, data, skip=None):
        def run():
            for origin, update in self._snoops:
                if origin != skip:
                    update(address, data)
        self.commit(run)

    # -- the client request service ------------------------------------------------

    def _service_handler(self):
        req = self.requests.front()
        st = self._svc
        remaining = st.remaining if st.remaining is not None else self.hit_latency
        if remaining > 1:
            def tick():
                st.remaining = remaining - 1
            self.commit(tick)
            return SUCCESS
        base = req.address - req.address % self.line_bytes
        line = self._lookup(base)
        if req.kind is MemoryOpKind.LOAD:
            return self._serve_load(req, base, line)
        return self._serve_store(req, base, line)

    def _serve_load(self, req, base, line):
        st = self._svc
        if line is not None and line.state is LineState.FULL:
            off = req.address - base
            value = bytes(line.data[off:off + req.size])
            resp = MemoryResponse(req.tag, req.origin,
                                  ResponseKind.LOAD_DATA, value)
            if not self._resp_buf[req.origin].push(resp):
                return FAILED
            self.requests.pop()

            def hit():
                self.hits += 1
                self._touch(line)
                st.remaining = None
            self.commit(hit)
            self.trace(TraceCategory.CACHE, "load hit 0x%x", req.address)
            return SUCCESS
        if line is not None:    # Loading: merge into the outstanding fetch
            if self._fill_arriving(base):
                # The fill is at the link front this very cycle; joining the
                # waiter list now would race it.  Retry as a plain hit.
                return FAILED
            self.requests.pop()

            def merge():
                line.waiters.append((req.origin, req.tag,
                                     req.address, req.size))
                self.misses += 1
                self.merges += 1
                st.remaining = None
            self.commit(merge)
            self.trace(TraceCategory.CACHE, "load merge 0x%x", req.address)
            return SUCCESS
        return self._allocate(req, base, for_load=True)

    def _serve_store(self, req, base, line):
        st = self._svc
        if line is not None and line.state is LineState.FULL:
            ident = self._ids.peek()
            msg = RingMessage(MessageKind.WRITE_UPDATE, base,
                              node=self.node_id, ident=ident,
                              data=req.data, offset=req.address - base)
            if not self._inject(msg):
                return FAILED
            self.requests.pop()
            off = req.address - base

            def store():
                line.data[off:off + len(req.data)] = req.data
                line.dirty = True
                line.pins += 1
                self._touch(line)
                self._store_acks[ident] = (req.origin, req.tag)
                self._ids.bump()
                self.system.counters["wu_created"] += 1
                st.remaining = None
            self.commit(store)
            self._count_hop()
            self._snoop_cores(req.address, req.data, skip=req.origin)
            self.trace(TraceCategory.CACHE, "store 0x%x update %s",
                       req.address, msg.ident)
            return SUCCESS
        if line is not None:    # Loading: wait for the fill, then store
            return FAILED
        return self._allocate(req, base, for_load=False)

    def _allocate(self, req, base, for_load):
        st = self._svc
        victim = self._pick_victim(base)
        if victim is None:
            self.deadlock_write(
                "no victim for line 0x%x: set full of loading or pinned ways",
                base)
            return FAILED
        if victim.state is LineState.FULL:
            # Eviction first; the allocation retries next cycle so that at
            # most one message enters the ring per cycle.
            ident = self._ids.peek()
            msg = RingMessage(MessageKind.EVICT, victim.tag,
                              node=self.node_id, ident=ident,
                              data=bytes(victim.data) if victim.dirty else b"",
                              dirty=victim.dirty, seq=victim.seq)
            if not self._inject(msg):
                return FAILED

            def evict():
                victim.tag = None
                victim.state = LineState.EMPTY
                victim.dirty = False
                victim.seq = 0
                self.evictions += 1
                self._ids.bump()
                self.system.counters["evict_created"] += 1
            self.commit(evict)
            self._count_hop()
            self.trace(TraceCategory.CACHE, "evict 0x%x%s", msg.line,
                       " dirty" if msg.dirty else "")
            return SUCCESS
        ident = self._ids.peek()
        msg = RingMessage(MessageKind.READ_REQUEST, base,
                          node=self.node_id, ident=ident)
        if not self._inject(msg):
            return FAILED
        if for_load:
            self.requests.pop()

        def alloc():
            victim.tag = base
            victim.state = LineState.LOADING
            victim.dirty = False
            victim.seq = 0
            victim.pins = 0
            victim.data[:] = bytes(self.line_bytes)
            victim.waiters = ([(req.origin, req.tag, req.address, req.size)]
                              if for_load else [])
            victim.pending = []
            self._touch(victim)
            self.misses += 1
            self._ids.bump()
            self.system.counters["rr_created"] += 1
            self.system.open_reads.add(ident)
            if for_load:
                st.remaining = None
        self.commit(alloc)
        self._count_hop()
        self.trace(TraceCategory.CACHE, "miss 0x%x request %s", base, ident)
        return SUCCESS

    # -- the ring port ---------------------------------------------------------------

    def _ring_handler(self):
        msg = self.link.front()
        kind = msg.kind
        if kind is MessageKind.READ_REQUEST:
            return self._ring_read_request(msg)
        if kind is MessageKind.READ_RESPONSE:
            return self._ring_read_response(msg)
        if kind is MessageKind.WRITE_UPDATE:
            return self._ring_write_update(msg)
        if kind is MessageKind.EVICT:
            if not self._forward(msg):
                return FAILED
            self.link.pop()
            self._count_hop()
            return SUCCESS
        raise ContractViolation("%s: unexpected ring message %s"
                                % (self.path, msg.describe()))

    def _ring_read_request(self, msg):
        line = self._lookup(msg.line)
        if (not msg.satisfied and line is not None
                and line.state is LineState.FULL):
            fwd = replace(msg, satisfied=True, data=bytes(line.data),
                          dirty=line.dirty, seq=line.seq)
            if not self._forward(fwd):
                return FAILED
            self.link.pop()

            def count():
                self._touch(line)
                self.system.counters["rr_satisfied"] += 1
            self.commit(count)
            self._count_hop()
            self.trace(TraceCategory.NET, "satisfy %s", msg.ident)
            return SUCCESS
        if not self._forward(msg):
            return FAILED
        self.link.pop()
        self._count_hop()
        return SUCCESS

    def _ring_read_response(self, msg):
        if msg.node != self.node_id:
            if not self._forward(msg):
                return FAILED
            self.link.pop()
            self._count_hop()
            return SUCCESS
        line = self._lookup(msg.line)
        if line is None or line.state is not LineState.LOADING:
            raise ContractViolation(
                "%s: response %s for a line not loading"
                % (self.path, msg.describe()))
        # Waiting loads read the fill image itself; stamped updates queued
        # while Loading land on the line afterwards.
        for origin, tag, address, size in line.waiters:
            off = address - msg.line
            resp = MemoryResponse(tag, origin, ResponseKind.LOAD_DATA,
                                  msg.data[off:off + size])
            if not self._resp_buf[origin].push(resp):
                return FAILED
        self.link.pop()

        def fill():
            line.data[:] = msg.data
            line.dirty = msg.dirty
            line.seq = msg.seq
            for off, data, seq in line.pending:
                line.data[off:off + len(data)] = data
                line.dirty = True
                line.seq = max(line.seq, seq)
            line.pending = []
            line.waiters = []
            line.state = LineState.FULL
            self._touch(line)
            self.fills += 1
            self.system.counters["resp_consumed"] += 1
            for ident in msg.fulfills:
                self.system.open_reads.discard(ident)
                self.system.counters["rr_fulfilled"] += 1
        self.commit(fill)
        self.trace(TraceCategory.NET, "fill 0x%x %s", msg.line, msg.ident)
        return SUCCESS

    def _ring_write_update(self, msg):
        if not msg.ordered:
            if not self._forward(msg):
                return FAILED
            self.link.pop()
            self._count_hop()
            return SUCCESS
        if msg.node == self.node_id:
            if msg.acked:
                return self._update_dies(msg)
            return self._update_acks(msg)
        # Between the directory and the writer a stamped update passes twice;
        # only the first passage may touch state, or a later update's bytes
        # could be overwritten with older ones.
        second_pass = False
        writer_pos = self.ring.pos_of.get(msg.node)
        if msg.acked and writer_pos is not None:
            me = self.ring.dist(msg.entry_pos, self.ring_pos)
            second_pass = me < self.ring.dist(msg.entry_pos, writer_pos)
        if not self._forward(msg):
            return FAILED
        self.link.pop()
        self._count_hop()
        if not second_pass:
            self._apply_update(msg)
        return SUCCESS

    def _apply_update(self, msg, skip_origin=None):
        line = self._lookup(msg.line)

        def apply():
            if line is not None and line.tag == msg.line:
                # An update older than the image already present (a fill can
                # arrive ahead of updates it incorporates) must not regress
                # the line; the same rule filters `pending` when a fill lands.
                if line.state is LineState.FULL and msg.seq > line.seq:
                    line.data[msg.offset:msg.offset + len(msg.data)] = msg.data
                    line.dirty = True
                    line.seq = msg.seq
                elif line.state is LineState.LOADING:
                    line.pending.append((msg.offset, msg.data, msg.seq))
        self.commit(apply)
        # L1 copies above this cache may outlive the cached line, so the
        # update is always relayed upward.
        self._snoop_cores(msg.line + msg.offset, msg.data, skip=skip_origin)

    def _update_acks(self, msg):
        origin, tag = self._store_acks[msg.ident]
        resp = MemoryResponse(tag, origin, ResponseKind.STORE_ACK)
        if not self._resp_buf[origin].push(resp):
            return FAILED
        if not self._forward(replace(msg, acked=True)):
            return FAILED
        self.link.pop()

        def ack():
            del self._store_acks[msg.ident]
            self.system.counters["wu_acked"] += 1
        self.commit(ack)
        self._count_hop()
        self._apply_update(msg, skip_origin=origin)
        self.trace(TraceCategory.NET, "store done %s", msg.ident)
        return SUCCESS

    def _update_dies(self, msg):
        line = self._lookup(msg.line)
        if line is None or line.pins < 1:
            raise ContractViolation(
                "%s: update %s died on an unpinned line"
                % (self.path, msg.describe()))
        self.link.pop()

        def unpin():
            line.pins -= 1
            # With stacked rings the message dying here is the partial
            # directory's injected copy (the stamped original is consumed
            # by the responsible root); on a single ring it is the stamped
            # update itself.
            if self.system.stacked:
                self.system.counters["wu_copies_retired"] += 1
            else:
                self.system.counters["wu_retired"] += 1
        self.commit(unpin)
        self.trace(TraceCategory.NET, "update done %s", msg.ident)
        return SUCCESS

    # -- introspection ------------------------------------------------------------

    def inspect_state(self):
        return {"hits": self.hits, "misses": self.misses,
                "merges": self.merges, "evictions": self.evictions,
                "fills": self.fills, "remaining": self._svc.remaining,
                "lines": tuple(line.snapshot() for group in self._lines
                               for line in group if line.tag is not None)}

    def full_lines(self):
        """(line base, bytes, dirty, seq, pins) of every Full way."""
        out = []
        for group in self._lines:
            for line in group:
                if line.state is LineState.FULL:
                    out.append((line.tag, bytes(line.data), line.dirty,
                                line.seq, line.pins))
        return out

    def busy_lines(self):
        """Line bases currently Full or Loading."""
        out = []
        for group in self._lines:
            for line in group:
                if line.state is not LineState.EMPTY:
                    out.append(line.tag)
        return out


class RootDirectory(_RingNode):
    """Counts cached copies per line of its stripe and talks to DDR."""

    def __init__(self, parent, index, node_id, clock, *, roots, stacked,
                 line_bytes, backing, ddr_latency, link_capacity,
                 ddr_queue_capacity=64):
        super().__init__(parent, "root%d" % index, clock, node_id,
                         link_capacity)
        self.index = index
        self.roots = roots
        self.stacked = stacked
        self.line_bytes = line_bytes
        self.backing = backing
        self.ddr_latency = ddr_latency
        self._entries = {}      # line base -> _DirEntry
        self._fetching = {}     # line base -> [(requester node, rr ident)]
        # Sequence watermarks outlive directory entries on purpose: an entry
        # is dropped when no holder remains, but stale data can still be in
        # flight (a satisfied read, a late writeback) carrying stamps from
        # before the drop.  Restarting the numbering would let such a
        # straggler outrank a newer image at the DDR write gate, so stamps
        # for a line stay monotonic for the life of the run.
        self._next_seq = {}     # line base -> next stamp to hand out
        self._written_seq = {}  # line base -> newest sequence persisted
        self._ddr = self.buffer("ddr", ddr_queue_capacity)
        self._ids = _IdSource((node_id, 0))
        self.ddr_reads = 0
        self.ddr_writes = 0
        self.writebacks_done = 0
        self.ring_proc = self.add_process("ring", self.link,
                                          self._ring_handler)
        self.ddr_proc = self.add_process("pipe", self._ddr,
                                         self._ddr_handler)

    def _now(self):
        return self.clock.cycle_index(self.kernel.master_cycle)

    def _mine(self, line):
        return line_to_root(line, self.line_bytes, self.roots) == self.index

    def _retiring(self, line):
        """True when the DDR pipe pops its job for `line` this cycle."""
        if self._ddr.empty():
            return False
        job = self._ddr.front()
        return (job.kind is MessageKind.READ_RESPONSE and job.line == line
                and self._now() >= job.ready
                and len(self._fetching[line]) == 1)

    def _entry(self, line):
        entry = self._entries.get(line)
        if entry is None:
            entry = self._entries[line] = _DirEntry()
        return entry

    def _gc(self, line):
        entry = self._entries.get(line)
        if (entry is not None and entry.count == 0 and not entry.rings
                and entry.inflight == 0 and line not in self._fetching):
            del self._entries[line]

    def _ring_of(self, node):
        return self.system.ring_of_node(node)

    # -- ring port ---------------------------------------------------------------

    def _ring_handler(self):
        msg = self.link.front()
        if not self._mine(msg.line):
            if not self._forward(msg):
                return FAILED
            self.link.pop()
            self._count_hop()
            return SUCCESS
        kind = msg.kind
        if kind is MessageKind.READ_REQUEST:
            return self._read_request(msg)
        if kind is MessageKind.WRITE_UPDATE:
            return self._write_update(msg)
        if kind is MessageKind.EVICT:
            return self._evict(msg)
        if kind is MessageKind.RING_JOIN:
            return self._ring_join(msg)
        raise ContractViolation("%s: unexpected ring message %s"
                                % (self.path, msg.describe()))

    def _ring_join(self, msg):
        """A partial directory confirms it delivered one of our responses."""
        entry = self._entries.get(msg.line)
        if entry is None or entry.inflight < 1:
            raise ContractViolation(
                "%s: stray delivery confirmation %s" % (self.path,
                                                        msg.describe()))
        ring = self._ring_of(msg.node)
        self.link.pop()

        def landed():
            entry.inflight -= 1
            entry.rings.add(ring)
            self.system.counters["ring_joins"] += 1
        self.commit(landed)
        self.trace(TraceCategory.NET, "joined ring %d 0x%x", ring, msg.line)
        return SUCCESS

    def _read_request(self, msg):
        entry = self._entries.get(msg.line)
        if msg.satisfied:
            resp = RingMessage(MessageKind.READ_RESPONSE, msg.line,
                               node=msg.node, ident=self._ids.peek(),
                               data=msg.data, dirty=msg.dirty, seq=msg.seq,
                               fulfills=(msg.ident,))
            if not self._forward(resp):
                return FAILED
            self.link.pop()

            def convert():
                e = self._entry(msg.line)
                if self.stacked:
                    # Counted into the ring set once the requester's partial
                    # directory confirms the delivery.
                    e.inflight += 1
                else:
                    e.count += 1
                self._ids.bump()
                self.system.counters["resp_created"] += 1
            self.commit(convert)
            self._count_hop()
            self.trace(TraceCategory.NET, "convert %s for %s",
                       msg.ident, msg.node)
            return SUCCESS
        if entry is not None and entry.holders(self.stacked) > 0:
            # A copy exists somewhere ahead; let the request chase it.
            if not self._forward(msg):
                return FAILED
            self.link.pop()
            self._count_hop()
            return SUCCESS
        if msg.line in self._fetching:
            if self._retiring(msg.line):
                # The fetch finishes this very cycle; joining its waiter
                # list now would be overlooked.  Retry next cycle.
                return FAILED
            self.link.pop()

            def merge():
                self._fetching[msg.line].append((msg.node, msg.ident))
                self.system.counters["rr_merged"] += 1
            self.commit(merge)
            self.trace(TraceCategory.MEM, "merge fetch 0x%x", msg.line)
            return SUCCESS
        job = _DdrJob(self._now() + self.ddr_latency, msg.line,
                      MessageKind.READ_RESPONSE)
        if not self._ddr.push(job):
            return FAILED
        self.link.pop()

        def fetch():
            self._fetching[msg.line] = [(msg.node, msg.ident)]
            self.ddr_reads += 1
            self.system.counters["ddr_reads"] += 1
        self.commit(fetch)
        self.trace(TraceCategory.MEM, "ddr read 0x%x", msg.line)
        return SUCCESS

    def _write_update(self, msg):
        if msg.ordered:
            if self.stacked:
                # The global copy finished its lap; local copies carry on.
                self.link.pop()

                def done():
                    self.system.counters["wu_retired"] += 1
                self.commit(done)
                return SUCCESS
            if not self._forward(msg):
                return FAILED
            self.link.pop()
            self._count_hop()
            return SUCCESS
        entry = self._entries.get(msg.line)
        if entry is None or entry.holders(self.stacked) == 0:
            raise ContractViolation(
                "%s: write update %s for a line with no holders"
                % (self.path, msg.describe()))
        stamped = replace(msg, ordered=True,
                          seq=self._next_seq.get(msg.line, 1),
                          entry_pos=self.ring_pos)
        if not self._forward(stamped):
            return FAILED
        self.link.pop()

        def order():
            self._next_seq[msg.line] = stamped.seq + 1
            self.system.counters["wu_ordered"] += 1
        self.commit(order)
        self._count_hop()
        self.trace(TraceCategory.NET, "order %s seq %d",
                   msg.ident, stamped.seq)
        return SUCCESS

    def _evict(self, msg):
        entry = self._entries.get(msg.line)
        if entry is None:
            raise ContractViolation(
                "%s: evict %s for an unknown line" % (self.path,
                                                      msg.describe()))
        write = msg.dirty and msg.seq >= self._written_seq.get(msg.line, 0)
        if write:
            job = _DdrJob(self._now() + self.ddr_latency, msg.line,
                          MessageKind.WRITEBACK_ACK)
            if not self._ddr.push(job):
                return FAILED
        self.link.pop()

        def retire():
            if self.stacked:
                if msg.last_copy:
                    entry.rings.discard(self._ring_of(msg.node))
            else:
                entry.count -= 1
                if entry.count < 0:
                    raise ContractViolation(
                        "%s: count below zero for line 0x%x"
                        % (self.path, msg.line))
            if write:
                self.backing.write(msg.line, msg.data)
                self._written_seq[msg.line] = msg.seq
                self.ddr_writes += 1
                self.system.counters["ddr_writes"] += 1
            self.system.counters["evict_retired"] += 1
            self._gc(msg.line)
        self.commit(retire)
        if write:
            self.trace(TraceCategory.MEM, "ddr write 0x%x seq %d",
                       msg.line, msg.seq)
        return SUCCESS

    # -- the DDR pipeline -----------------------------------------------------------

    def _ddr_handler(self):
        job = self._ddr.front()
        if self._now() < job.ready:
            return SUCCESS      # device busy; hold the slot
        if job.kind is MessageKind.WRITEBACK_ACK:
            self._ddr.pop()

            def done():
                self.writebacks_done += 1
                self.system.counters["writeback_acks"] += 1
            self.commit(done)
            self.trace(TraceCategory.MEM, "writeback ack 0x%x", job.line)
            return SUCCESS
        waiters = self._fetching[job.line]
        node, rr_ident = waiters[0]
        seq = self._written_seq.get(job.line, 0)
        resp = RingMessage(MessageKind.READ_RESPONSE, job.line, node=node,
                           ident=self._ids.peek(),
                           data=self.backing.read_line(job.line),
                           dirty=False, seq=seq, fulfills=(rr_ident,))
        if not self._inject(resp):
            return FAILED
        if len(waiters) == 1:
            self._ddr.pop()

        def inject():
            waiters.pop(0)
            if not waiters:
                del self._fetching[job.line]
            e = self._entry(job.line)
            if self.stacked:
                e.inflight += 1
            else:
                e.count += 1
            self._ids.bump()
            self.system.counters["resp_created"] += 1
        self.commit(inject)
        self._count_hop()
        self.trace(TraceCategory.MEM, "ddr data 0x%x to %d", job.line, node)
        return SUCCESS

    # -- introspection ------------------------------------------------------------

    def inspect_state(self):
        return {"entries": len(self._entries),
                "fetching": len(self._fetching),
                "ddr_reads": self.ddr_reads,
                "ddr_writes": self.ddr_writes,
                "writebacks_done": self.writebacks_done}

    def directory(self):
        """line -> holder count (single ring) or ring set (stacked)."""
        if self.stacked:
            return {line: set(e.rings) for line, e in self._entries.items()}
        return {line: e.count for line, e in self._entries.items()}


class PartialDirectory(_RingNode):
    """Joins one local ring to the global ring and inventories the lines
    present in its local ring."""

    def __init__(self, parent, index, node_id, clock, *, line_bytes,
                 link_capacity, bridge_depth=64):
        super().__init__(parent, "pd%d" % index, clock, node_id,
                         link_capacity)
        self.index = index
        self.line_bytes = line_bytes
        # The inherited `link`/`out`/`ring` are the local-ring port; the
        # global-ring port has its own buffer and process.
        self.global_link = self.buffer("global_link", link_capacity,
                                       max_pushes_per_cycle=2)
        self.global_out = None
        self.global_ring = None
        self.global_pos = None
        # Ring crossings park here whenever the target ring has no vacant
        # slot.  Both rings therefore always absorb at the junction and can
        # never gridlock each other; the drain processes move the parked
        # messages on as slots open up.
        self._up = self.buffer("up", bridge_depth)
        self._down = self.buffer("down", bridge_depth)
        # `counts` is the cycle-start inventory (line base -> copies in the
        # local ring).  Both handlers read it to route messages, and each
        # handler re-runs during the Commit phase, so it must show the same
        # values in every phase of a cycle.  Mutations therefore go through
        # `_adjust`, which queues a delta that `_sync` folds in at the first
        # handler run of the next cycle.
        self.counts = {}
        self._count_deltas = []
        self._counts_cycle = -1
        self._ids = _IdSource((node_id, 0))
        self.local_proc = self.add_process("local", self.link,
                                           self._local_handler)
        self.global_proc = self.add_process("global", self.global_link,
                                            self._global_handler)
        # Created after the ring handlers so their vacancy probes see the
        # handlers' same-cycle pushes and defer instead of overfilling.
        self.up_proc = self.add_process("up", self._up, self._drain_up)
        self.down_proc = self.add_process("down", self._down,
                                          self._drain_down)

    def _sync(self):
        now = self.kernel.master_cycle
        if self._counts_cycle == now:
            return
        self._counts_cycle = now
        for line, delta in self._count_deltas:
            left = self.counts.get(line, 0) + delta
            if left < 0:
                raise ContractViolation(
                    "%s: copy count of 0x%x went negative" % (self.path, line))
            if left:
                self.counts[line] = left
            else:
                self.counts.pop(line, None)
        del self._count_deltas[:]

    def _adjust(self, line, delta):
        """Record a copy-count change; visible from the next cycle on."""
        self._count_deltas.append((line, delta))

    def effective_counts(self):
        """The inventory with any still-queued deltas folded in."""
        merged = dict(self.counts)
        for line, delta in self._count_deltas:
            left = merged.get(line, 0) + delta
            if left:
                merged[line] = left
            else:
                merged.pop(line, None)
        return merged

    def _count_global_hop(self, n=1):
        ring = self.global_ring

        def bump():
            ring.hops += n
        self.commit(bump)

    def _escalate(self, msg):
        """Take a message off the local ring, bound for the global ring:
        straight onto it when a slot is vacant, otherwise into the lift
        queue.  False only when even the queue is full."""
        if self._up.empty() and self.global_out.vacant():
            if self.global_out.push(msg):
                self._count_global_hop()
                return True
        return self._up.push(msg)

    def _inject_local(self, msg):
        """Take a message off the global ring, bound for the local ring;
        the mirror image of _escalate."""
        if self._down.empty() and self.out.vacant():
            if self.out.push(msg):
                self._count_hop()
                return True
        return self._down.push(msg)

    def _drain_up(self):
        msg = self._up.front()
        if not (self.global_out.vacant() and self.global_out.push(msg)):
            self.deadlock_write("no vacant global-ring slot for %s",
                                msg.describe())
            return FAILED
        self._up.pop()
        self._count_global_hop()
        return SUCCESS

    def _drain_down(self):
        msg = self._down.front()
        if not (self.out.vacant() and self.out.push(msg)):
            self.deadlock_write("no vacant local-ring slot for %s",
                                msg.describe())
            return FAILED
        self._down.pop()
        self._count_hop()
        return SUCCESS

    def _my_ring(self, node):
        return self.system.ring_of_node(node) == self.index

    # -- local-ring port ------------------------------------------------------------

    def _local_handler(self):
        self._sync()
        msg = self.link.front()
        kind = msg.kind
        if kind is MessageKind.READ_REQUEST:
            if msg.satisfied:
                if (not self._my_ring(msg.node)
                        or self.counts.get(msg.line, 0) == 0):
                    # Satisfied on a detour, or the ring just lost its last
                    # counted copy: the data must travel by way of the
                    # responsible root, which keeps the new copy accounted
                    # to the right ring.
                    if not self._escalate(msg):
                        return FAILED
                    self.link.pop()

                    def up():
                        self.system.counters["escalations"] += 1
                    self.commit(up)
                    self.trace(TraceCategory.NET, "escalate %s", msg.ident)
                    return SUCCESS
                # Served inside the requester's own ring, which verifiably
                # still holds a counted copy: convert here, never leave it.
                resp = RingMessage(MessageKind.READ_RESPONSE, msg.line,
                                   node=msg.node, ident=self._ids.peek(),
                                   data=msg.data, dirty=msg.dirty,
                                   seq=msg.seq, fulfills=(msg.ident,))
                if not self._forward(resp):
                    return FAILED
                self.link.pop()

                def convert():
                    self._adjust(msg.line, +1)
                    self._ids.bump()
                    self.system.counters["resp_created"] += 1
                    self.system.counters["local_conversions"] += 1
                self.commit(convert)
                self._count_hop()
                self.trace(TraceCategory.NET, "convert %s locally", msg.ident)
                return SUCCESS
            if self.counts.get(msg.line, 0) > 0:
                # A local copy or an inbound fill exists; try another lap.
                if not self._forward(msg):
                    return FAILED
                self.link.pop()
                self._count_hop()
                return SUCCESS
            if not self._escalate(msg):
                return FAILED
            self.link.pop()

            def up():
                self.system.counters["escalations"] += 1
            self.commit(up)
            self.trace(TraceCategory.NET, "escalate %s", msg.ident)
            return SUCCESS
        if kind is MessageKind.WRITE_UPDATE:
            if not msg.ordered:
                if not self._escalate(msg):
                    return FAILED
                self.link.pop()
                self.trace(TraceCategory.NET, "escalate %s", msg.ident)
                return SUCCESS
            if msg.acked:
                # The writer lives in this ring; the copy dies there.
                if not self._forward(msg):
                    return FAILED
                self.link.pop()
                self._count_hop()
                return SUCCESS
            self.link.pop()     # a guest ring's copy finished its lap

            def done():
                self.system.counters["wu_copies_retired"] += 1
            self.commit(done)
            return SUCCESS
        if kind is MessageKind.EVICT:
            remaining = self.counts.get(msg.line, 0) - 1
            if remaining < 0:
                raise ContractViolation(
                    "%s: evict %s for an uncounted line"
                    % (self.path, msg.describe()))
            last = remaining == 0
            if msg.dirty or last:
                if not self._escalate(replace(msg, last_copy=last)):
                    return FAILED
            self.link.pop()

            def retire():
                self._adjust(msg.line, -1)
                if not (msg.dirty or last):
                    self.system.counters["evict_retired"] += 1
            self.commit(retire)
            return SUCCESS
        raise ContractViolation("%s: unexpected local message %s"
                                % (self.path, msg.describe()))

    # -- global-ring port -------------------------------------------------------------

    def _global_handler(self):
        self._sync()
        msg = self.global_link.front()
        kind = msg.kind
        if kind is MessageKind.READ_REQUEST:
            if not msg.satisfied and self.counts.get(msg.line, 0) > 0:
                # Detour through this ring; a local copy can satisfy it.
                if not self._inject_local(msg):
                    return FAILED
                self.global_link.pop()

                def down():
                    self.system.counters["detours"] += 1
                self.commit(down)
                self.trace(TraceCategory.NET, "detour %s", msg.ident)
                return SUCCESS
            if not self._forward_global(msg):
                return FAILED
            self.global_link.pop()
            self._count_global_hop()
            return SUCCESS
        if kind is MessageKind.READ_RESPONSE:
            if self._my_ring(msg.node):
                if not self._inject_local(msg):
                    return FAILED
                # Confirm the delivery to the responsible root so that it
                # can move the copy from its in-flight tally into the ring
                # set.  The note must travel through the same lift queue as
                # escalated evicts: the root replays ring-membership events
                # in arrival order, so joins and evicts from one junction
                # must never overtake each other.
                note = RingMessage(MessageKind.RING_JOIN, msg.line,
                                   node=msg.node, ident=msg.ident)
                if not self._escalate(note):
                    return FAILED
                self.global_link.pop()

                def down():
                    self._adjust(msg.line, +1)
                self.commit(down)
                return SUCCESS
            if not self._forward_global(msg):
                return FAILED
            self.global_link.pop()
            self._count_global_hop()
            return SUCCESS
        if kind is MessageKind.WRITE_UPDATE:
            if not msg.ordered:
                if not self._forward_global(msg):
                    return FAILED
                self.global_link.pop()
                self._count_global_hop()
                return SUCCESS
            # Copy the stamped update into the local ring unconditionally:
            # Loading lines and L1 copies must see it even when the partial
            # count is still zero.
            local = replace(msg, entry_pos=0, acked=False)
            if not self._inject_local(local):
                return FAILED
            if not self._forward_global(msg):
                return FAILED
            self.global_link.pop()

            def down():
                self.system.counters["wu_copies_injected"] += 1
            self.commit(down)
            self._count_global_hop()
            return SUCCESS
        if kind is MessageKind.EVICT or kind is MessageKind.RING_JOIN:
            if not self._forward_global(msg):
                return FAILED
            self.global_link.pop()
            self._count_global_hop()
            return SUCCESS
        raise ContractViolation("%s: unexpected global message %s"
                                % (self.path, msg.describe()))

    def _forward_global(self, msg):
        return self.global_out.push(msg)

    def inspect_state(self):
        merged = self.effective_counts()
        return {"lines": len(merged), "copies": sum(merged.values()),
                "lifting": len(self._up), "dropping": len(self._down)}


class CdmaSystem(Component):
    """Builds attraction caches, directories, and rings from the topology
    parameters and serves the familiar connect() memory interface."""

    def __init__(self, kernel, name, clock, cores, *, cores_per_cache=1,
                 roots=1, stacked=False, caches_per_local_ring=None,
                 sets=512, ways=4, line_bytes=64,
                 selector=SelectorKind.XOR_FOLD, link_capacity=2,
                 hit_latency=1, ddr_latency=10, queue_capacity=16):
        super().__init__(kernel, name, clock)
        if cores < 1:
            raise ConfigurationError("%s: at least one core" % name)
        if cores_per_cache < 1 or cores % cores_per_cache != 0:
            raise ConfigurationError(
                "%s: %d cores are not divisible into caches of %d"
                % (name, cores, cores_per_cache))
        caches = cores // cores_per_cache
        if roots < 1:
            raise ConfigurationError("%s: at least one root directory" % name)
        if link_capacity < 2:
            raise ConfigurationError(
                "%s: link buffers need capacity >= 2" % name)
        if stacked:
            if caches_per_local_ring is None:
                caches_per_local_ring = caches
            if (caches_per_local_ring < 1
                    or caches % caches_per_local_ring != 0):
                raise ConfigurationError(
                    "%s: %d caches are not divisible into rings of %d"
                    % (name, caches, caches_per_local_ring))
        self.cores = cores
        self.cores_per_cache = cores_per_cache
        self.line_bytes = line_bytes
        self.stacked = stacked
        self.backing = MainMemory(line_bytes)
        self.counters = Counter()
        self.open_reads = set()
        self._connected = 0
        self._node_ring = {}    # AC node id -> local ring index

        next_id = [0]

        def make_ac(index):
            ac = AttractionCache(
                self, index, next_id[0], clock, max_cores=cores_per_cache,
                sets=sets, ways=ways, line_bytes=line_bytes,
                selector_kind=selector, hit_latency=hit_latency,
                link_capacity=link_capacity, queue_capacity=queue_capacity,
                response_capacity=8)
            next_id[0] += 1
            return ac

        def make_root(index):
            root = RootDirectory(
                self, index, next_id[0], clock, roots=roots, stacked=stacked,
                line_bytes=line_bytes, backing=self.backing,
                ddr_latency=ddr_latency, link_capacity=link_capacity)
            next_id[0] += 1
            return root

        self.caches = [make_ac(i) for i in range(caches)]
        self.roots = [make_root(i) for i in range(roots)]
        self.directories = []
        self.local_rings = []
        self.global_ring = None

        if not stacked:
            ring = _Ring("ring")
            for node in self._interleave(self.caches, self.roots):
                ring.add(node)
            self._close_ring(ring)
            for ac in self.caches:
                self._node_ring[ac.node_id] = 0
            self.local_rings = [ring]
        else:
            n_rings = caches // caches_per_local_ring
            for r in range(n_rings):
                pd = PartialDirectory(self, r, next_id[0], clock,
                                      line_bytes=line_bytes,
                                      link_capacity=link_capacity)
                next_id[0] += 1
                self.directories.append(pd)
            for r, pd in enumerate(self.directories):
                ring = _Ring("ring%d" % r)
                ring.add(pd)
                members = self.caches[r * caches_per_local_ring:
                                      (r + 1) * caches_per_local_ring]
                for ac in members:
                    ring.add(ac)
                    self._node_ring[ac.node_id] = r
                self._close_ring(ring)
                self.local_rings.append(ring)
            gring = _Ring("global")
            for node in self._interleave(self.directories, self.roots):
                gring.add(node)
            self._close_global_ring(gring)
            self.global_ring = gring

    @staticmethod
    def _interleave(many, few):
        """Spread `few` evenly among `many`, keeping both in order."""
        total = len(many) + len(few)
        slots = {j * total // len(few) for j in range(len(few))}
        out, mi, fi = [], 0, 0
        for k in range(total):
            if k in slots:
                out.append(few[fi])
                fi += 1
            else:
                out.append(many[mi])
                mi += 1
        return out

    @staticmethod
    def _close_ring(ring):
        n = len(ring.nodes)
        for i, node in enumerate(ring.nodes):
            node.out = ring.nodes[(i + 1) % n].link
            node.ring = ring
            node.ring_pos = i

    @staticmethod
    def _close_global_ring(ring):
        n = len(ring.nodes)
        for i, node in enumerate(ring.nodes):
            nxt = ring.nodes[(i + 1) % n]
            out = (nxt.global_link if isinstance(nxt, PartialDirectory)
                   else nxt.link)
            if isinstance(node, PartialDirectory):
                node.global_out = out
                node.global_ring = ring
                node.global_pos = i
            else:
                node.out = out
                node.ring = ring
                node.ring_pos = i

    def ring_of_node(self, node_id):
        return self._node_ring.get(node_id)

    # -- client interface ----------------------------------------------------------

    def connect(self, origin, process, snoop=None):
        if self._connected >= self.cores:
            raise ConfigurationError(
                "%s: more clients than the %d configured cores"
                % (self.path, self.cores))
        if not 0 <= origin < self.cores:
            raise ConfigurationError(
                "%s: origin %d out of range" % (self.path, origin))
        self._connected += 1
        ac = self.caches[origin // self.cores_per_cache]
        return ac.connect_core(origin, process, snoop)

    # -- whole-system introspection ---------------------------------------------------

    @property
    def ddr_reads(self):
        return sum(root.ddr_reads for root in self.roots)

    @property
    def ddr_writes(self):
        return sum(root.ddr_writes for root in self.roots)

    def inspect_state(self):
        st = {"ddr_reads": self.ddr_reads, "ddr_writes": self.ddr_writes,
              "open_reads": len(self.open_reads)}
        for ring in self.local_rings:
            st["hops_%s" % ring.name] = ring.hops
        if self.global_ring is not None:
            st["hops_global"] = self.global_ring.hops
        return st

    def drained(self):
        """True when no message is in flight anywhere."""
        for ac in self.caches:
            if len(ac.link) or ac._store_acks:
                return False
        for root in self.roots:
            if len(root.link) or len(root._ddr) or root._fetching:
                return False
        for pd in self.directories:
            if (len(pd.link) or len(pd.global_link)
                    or len(pd._up) or len(pd._down)):
                return False
        return True

    def audit(self):
        """Cross-check caches against directories; a list of findings,
        empty when the quiescent state is consistent."""
        problems = []
        if not self.drained():
            problems.append("messages still in flight")
        if self.open_reads:
            problems.append("unanswered read requests: %d"
                            % len(self.open_reads))
        copies = {}
        images = {}
        dirty_lines = set()
        for ac in self.caches:
            for group in ac._lines:
                for line in group:
                    if line.state is LineState.LOADING:
                        problems.append("%s: line 0x%x still loading"
                                        % (ac.path, line.tag))
                    if line.state is not LineState.FULL:
                        continue
                    if line.pins:
                        problems.append("%s: line 0x%x still pinned"
                                        % (ac.path, line.tag))
                    copies.setdefault(line.tag, []).append(ac)
                    if line.dirty:
                        dirty_lines.add(line.tag)
                    seen = images.setdefault(line.tag, bytes(line.data))
                    if seen != bytes(line.data):
                        problems.append("line 0x%x differs between caches"
                                        % line.tag)
        directory = {}
        for root in self.roots:
            directory.update(root.directory())
            for line, entry in root._entries.items():
                if entry.inflight:
                    problems.append("%s: %d deliveries of 0x%x unconfirmed"
                                    % (root.path, entry.inflight, line))
        for line, holders in sorted(copies.items()):
            if self.stacked:
                want = {self._node_ring[ac.node_id] for ac in holders}
            else:
                want = len(holders)
            got = directory.get(line, set() if self.stacked else 0)
            if got != want:
                problems.append("line 0x%x: directory says %r, caches say %r"
                                % (line, got, want))
        for line, got in sorted(directory.items()):
            if line not in copies and (got if not self.stacked else len(got)):
                problems.append("line 0x%x: directory says %r, no copies"
                                % (line, got))
        if self.stacked:
            local = {}
            for ac in self.caches:
                r = self._node_ring[ac.node_id]
                for tag in ac.busy_lines():
                    key = (r, tag)
                    local[key] = local.get(key, 0) + 1
            recorded = {}
            for pd in self.directories:
                for line, n in pd.effective_counts().items():
                    recorded[(pd.index, line)] = n
            if local != recorded:
                problems.append("partial directory counts disagree: %r vs %r"
                                % (recorded, local))
        for line in sorted(images):
            if line not in dirty_lines:
                if self.backing.read_line(line) != images[line]:
                    problems.append("line 0x%x: clean copies differ from DDR"
                                    % line)
        c = self.counters
        if c["rr_created"] != c["rr_fulfilled"]:
            problems.append("read requests %d != responses consumed %d"
                            % (c["rr_created"], c["rr_fulfilled"]))
        if c["resp_created"] != c["resp_consumed"]:
            problems.append("responses created %d != consumed %d"
                            % (c["resp_created"], c["resp_consumed"]))
        if not (c["wu_created"] == c["wu_ordered"] == c["wu_acked"]
                == c["wu_retired"]):
            problems.append(
                "update lifecycle unbalanced: %d created, %d ordered, "
                "%d acked, %d retired"
                % (c["wu_created"], c["wu_ordered"], c["wu_acked"],
                   c["wu_retired"]))
        if c["wu_copies_injected"] != c["wu_copies_retired"]:
            problems.append("update copies injected %d != retired %d"
                            % (c["wu_copies_injected"],
                               c["wu_copies_retired"]))
        if c["evict_created"] != c["evict_retired"]:
            problems.append("evictions created %d != retired %d"
                            % (c["evict_created"], c["evict_retired"]))
        if c["ddr_writes"] != c["writeback_acks"]:
            problems.append("ddr writes %d != writeback acks %d"
                            % (c["ddr_writes"], c["writeback_acks"]))
        return problems
