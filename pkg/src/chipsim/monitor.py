"""Asynchronous sampling monitor, its binary stream format, and stats.

The monitor thread runs next to the simulation thread and samples a set of
published counters at a wall-clock rate, appending fixed-width binary
records to a sink.  Stream layout:

    MGMON1\\n            magic
    name 8\\n            one descriptor per variable, width in bytes
    \\n                  blank line ends the header
    <records>           little-endian u64 master_cycle, then one u64 per
                        variable in descriptor order

so every record is 8*(1+nvars) bytes and record cycles never decrease.
The synchronous event-trace format lives in the kernel; this module adds
the wall-clock sampler and the post-run statistics report.
"""

from __future__ import annotations

import logging
import struct
import threading
import time

from .cdma import CdmaSystem
from .kernel import Buffer, ConfigurationError
from .memory import BankedMemory, DDRMemory

MAGIC = b"MGMON1\n"
_MASK64 = (1 << 64) - 1

log = logging.getLogger(__name__)


def write_stream_header(sink, names):
    """Write the magic and one descriptor line per variable (one write)."""
    for name in names:
        if not name or " " in name or "\n" in name:
            raise ConfigurationError("bad sample variable name: %r" % name)
    header = MAGIC + b"".join(("%s 8\n" % n).encode("ascii") for n in names)
    sink.write(header + b"\n")


def pack_record(cycle, values):
    return struct.pack("<%dQ" % (1 + len(values)), cycle & _MASK64,
                       *(v & _MASK64 for v in values))


def read_sample_stream(data):
    """Parse a complete stream; (names, rows) with rows of u64 tuples.

    The cycle is element 0 of every row.  Raises ValueError naming the
    byte offset of the first defect.
    """
    if not data.startswith(MAGIC):
        raise ValueError("byte 0: bad magic, not a sample stream")
    pos = len(MAGIC)
    names = []
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise ValueError("byte %d: truncated header" % pos)
        line = data[pos:end]
        if line == b"":
            pos = end + 1
            break
        parts = line.split(b" ")
        if len(parts) != 2 or parts[1] != b"8" or not parts[0]:
            raise ValueError("byte %d: bad descriptor line %r" % (pos, line))
        names.append(parts[0].decode("ascii"))
        pos = end + 1
    record = 8 * (1 + len(names))
    body = len(data) - pos
    rows = [struct.unpack_from("<%dQ" % (1 + len(names)), data, pos + i)
            for i in range(0, body - body % record, record)]
    if body % record:
        raise ValueError(
            "byte %d: truncated record (%d trailing bytes)"
            % (pos + body - body % record, body % record))
    return names, rows


class Monitor:
    """Samples published kernel counters at `rate` per second of wall time.

    start() writes the header and launches the sampling thread; stop()
    ends it and flushes the sink.  A sink write failure stops sampling
    with a logged warning and leaves the simulation untouched.
    """

    def __init__(self, kernel, names, sink, rate=1000):
        if rate <= 0:
            raise ConfigurationError("monitor rate must be positive")
        self.kernel = kernel
        self.names = list(names)
        self.sink = sink
        self.rate = rate
        self.samples = 0
        self._getters = []
        for name in self.names:
            getter = kernel.published.get(name)
            if getter is None:
                raise ConfigurationError(
                    "no published counter %r (have: %s)"
                    % (name, ", ".join(sorted(kernel.published)) or "none"))
            self._getters.append(getter)
        self._stop = threading.Event()
        self._thread = None

    def start(self):
        if self._thread is not None:
            raise ConfigurationError("monitor already started")
        write_stream_header(self.sink, self.names)
        self._thread = threading.Thread(target=self._loop, daemon=True,
                                        name="chipsim-monitor")
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        flush = getattr(self.sink, "flush", None)
        if flush is not None:
            try:
                flush()
            except OSError as exc:
                log.warning("monitor sink flush failed: %s", exc)

    def _loop(self):
        interval = 1.0 / self.rate
        deadline = time.monotonic() + interval
        while not self._stop.wait(max(0.0, deadline - time.monotonic())):
            cycle = self.kernel.master_cycle
            try:
                values = [g() for g in self._getters]
                self.sink.write(pack_record(cycle, values))
            except Exception as exc:
                log.warning("monitor stopped: %s", exc)
                return
            self.samples += 1
            deadline += interval


# -- statistics -------------------------------------------------------------------


def _queue_lines(model):
    """Occupancy maxima of the memory side's internal buffers."""
    prefix = model.memory.path + "."
    lines = []
    for path in model.kernel.paths():
        obj = model.kernel.find(path)
        if not isinstance(obj, Buffer) or not path.startswith(prefix):
            continue
        if obj.name.startswith("resp"):
            continue
        lines.append("  %s: max_occupancy=%d/%d"
                     % (path, obj.max_occupancy, obj.capacity))
    return lines


def stats_report(model):
    """Line-oriented counter summary of a halted or paused model."""
    lines = ["statistics at cycle %d" % model.kernel.master_cycle]
    for core in model.cores:
        lines.append(
            "%s: cycles=%d ops_executed=%d mem_requests=%d l1_hits=%d"
            " l1_misses=%d outstanding=%d"
            % (core.name, core.cycles, core.ops_executed, core.mem_requests,
               core.l1_hits, core.l1_misses, core.outstanding))
    mem = model.memory
    if isinstance(mem, CdmaSystem):
        lines.append(
            "%s (%s): ddr_reads=%d ddr_writes=%d hits=%d misses=%d"
            " evictions=%d"
            % (mem.name, type(mem).__name__, mem.ddr_reads, mem.ddr_writes,
               sum(ac.hits for ac in mem.caches),
               sum(ac.misses for ac in mem.caches),
               sum(ac.evictions for ac in mem.caches)))
        for name in sorted(mem.counters):
            lines.append("  counter %s=%d" % (name, mem.counters[name]))
        for ring in mem.local_rings:
            lines.append("  hops %s=%d" % (ring.name, ring.hops))
        if mem.global_ring is not None:
            lines.append("  hops %s=%d"
                         % (mem.global_ring.name, mem.global_ring.hops))
    else:
        lines.append("%s (%s): loads_done=%d stores_done=%d"
                     % (mem.name, type(mem).__name__, mem.loads_done,
                        mem.stores_done))
        if isinstance(mem, BankedMemory):
            for bank in mem.banks:
                lines.append("  %s: accesses=%d" % (bank.name, bank.accesses))
        elif isinstance(mem, DDRMemory):
            for chan in mem.channels:
                lines.append("  %s: accesses=%d" % (chan.name, chan.accesses))
    lines.extend(_queue_lines(model))
    return "\n".join(lines) + "\n"
