"""System construction: a configuration database in, a runnable model out.

build_system() instantiates the kernel, the clock domains, the memory
system named by `MemoryType` and one trace-driven core per `NumCores`,
wires the cores to the memory, and publishes the counters the monitor may
sample.  Construction is total: every configuration problem raises
ConfigurationError before the first cycle runs, and no further model
objects are created once stepping begins.
"""

from __future__ import annotations

import warnings

from .cdma import CdmaSystem
from .config import ConfigWarning
from .core import Core
from .kernel import ConfigurationError, Kernel
from .memory import (
    BankedMemory,
    DdrTiming,
    DDRMemory,
    ParallelMemory,
    SerialMemory,
)
from .selectors import SelectorKind, selector_kind, selector_name


class SystemModel:
    """A constructed model: kernel, cores, memory and their clocks."""

    def __init__(self, kernel, db, memory_type, cores, memory,
                 core_clock, mem_clock):
        self.kernel = kernel
        self.db = db
        self.memory_type = memory_type
        self.cores = cores
        self.memory = memory
        self.core_clock = core_clock
        self.mem_clock = mem_clock

    # -- run control -----------------------------------------------------------

    def step(self, max_cycles=None):
        return self.kernel.step(max_cycles)

    def run(self):
        return self.kernel.run()

    @property
    def master_cycle(self):
        return self.kernel.master_cycle

    # -- aggregate counters ------------------------------------------------------

    def ops_total(self):
        return sum(core.ops_executed for core in self.cores)

    def mem_requests_total(self):
        return sum(core.mem_requests for core in self.cores)

    def stats(self):
        from .monitor import stats_report
        return stats_report(self)

    # -- structure ----------------------------------------------------------------

    def describe(self):
        """Deterministic text listing of the constructed topology."""
        lines = [
            "memory_type = %s" % self.memory_type,
            "cores = %d" % len(self.cores),
            "clock %s period=%d phase=%d" % (
                self.core_clock.name, self.core_clock.period,
                self.core_clock.phase),
            "clock %s period=%d phase=%d" % (
                self.mem_clock.name, self.mem_clock.period,
                self.mem_clock.phase),
        ]
        for path in self.kernel.paths():
            lines.append("%s: %s" % (path, type(self.kernel.find(path)).__name__))
        return "\n".join(lines) + "\n"


def _selector_override(db, preset):
    """The selector forced by `BankSelector`, or None for the preset rule."""
    name = db.get_text("BankSelector")
    if preset in ("RANDOMBANKED", "RANDOMDDR"):
        forced = SelectorKind.ROTATION_MIX4
        if name and selector_kind(name) is not forced:
            raise ConfigurationError(
                "BankSelector=%s contradicts MemoryType=%s (always %s)"
                % (name, preset, selector_name(forced)))
        return forced
    return selector_kind(name) if name else None


def _build_memory(db, kernel, clock, preset, cores, line_bytes):
    latency = db.get_int("MemoryLatency")
    queue_capacity = db.get_int("QueueCapacity")
    if preset == "SERIAL":
        return SerialMemory(kernel, "mem", clock, cores=cores,
                            latency=latency, queue_capacity=queue_capacity,
                            line_bytes=line_bytes)
    if preset == "PARALLEL":
        return ParallelMemory(kernel, "mem", clock, latency=latency,
                              queue_capacity=queue_capacity,
                              line_bytes=line_bytes)
    if preset in ("BANKED", "RANDOMBANKED"):
        return BankedMemory(kernel, "mem", clock, cores=cores,
                            banks=db.get_opt_int("NumBanks"),
                            latency=latency, queue_capacity=queue_capacity,
                            selector=_selector_override(db, preset),
                            line_bytes=line_bytes)
    if preset in ("DDR", "RANDOMDDR"):
        timing = DdrTiming(
            activate_cycles=db.get_int("ddr.activate_cycles"),
            column_cycles=db.get_int("ddr.column_cycles"),
            precharge_cycles=db.get_int("ddr.precharge_cycles"),
            burst_cycles=db.get_int("ddr.burst_cycles"))
        return DDRMemory(kernel, "mem", clock, cores=cores,
                         channels=db.get_opt_int("NumChannels"),
                         timing=timing,
                         selector=_selector_override(db, preset),
                         row_lines=db.get_int("ddr.row_lines"),
                         queue_capacity=queue_capacity,
                         line_bytes=line_bytes)
    if preset == "COMA":
        return CdmaSystem(
            kernel, "mem", clock, cores,
            cores_per_cache=db.get_int("coma.cores_per_cache"),
            roots=db.get_int("coma.roots"),
            stacked=db.get_bool("coma.stacked"),
            caches_per_local_ring=db.get_opt_int("coma.caches_per_ring"),
            sets=db.get_int("coma.sets"),
            ways=db.get_int("coma.ways"),
            line_bytes=line_bytes,
            selector=selector_kind(db.get_text("coma.selector")),
            link_capacity=db.get_int("coma.link_capacity"),
            hit_latency=db.get_int("coma.hit_latency"),
            ddr_latency=db.get_int("coma.ddr_latency"),
            queue_capacity=db.get_int("coma.queue_capacity"))
    raise ConfigurationError("unknown memory preset: %s" % preset)


def _publish_counters(kernel, cores, memory):
    kernel.publish("master_cycle", lambda: kernel.master_cycle)
    kernel.publish("ops_total",
                   lambda: sum(c.ops_executed for c in cores))
    for core in cores:
        for counter in ("ops_executed", "mem_requests",
                        "l1_hits", "l1_misses"):
            kernel.publish(
                "%s.%s" % (core.name, counter),
                lambda c=core, n=counter: getattr(c, n))
    if isinstance(memory, CdmaSystem):
        kernel.publish("mem.ddr_reads", lambda: memory.ddr_reads)
        kernel.publish("mem.ddr_writes", lambda: memory.ddr_writes)
        kernel.publish("mem.hits",
                       lambda: sum(ac.hits for ac in memory.caches))
    else:
        kernel.publish("mem.loads_done", lambda: memory.loads_done)
        kernel.publish("mem.stores_done", lambda: memory.stores_done)


def build_system(db, workloads=None):
    """Construct a SystemModel from a configuration database.

    `workloads` is a list of op lists: one entry per core, a single entry
    to run on every core, or None for empty workloads (the model halts on
    its first step).  Unknown configuration keys produce a ConfigWarning.
    """
    for key in db.unknown_keys():
        warnings.warn("unknown configuration key: %s" % key, ConfigWarning,
                      stacklevel=2)
    preset = db.get_choice("MemoryType")
    ncores = db.get_int("NumCores")
    if ncores < 1:
        raise ConfigurationError("NumCores must be >= 1, got %d" % ncores)
    line_bytes = db.get_int("CacheLineSize")
    if workloads is None:
        workloads = [[] for _ in range(ncores)]
    elif len(workloads) == 1 and ncores > 1:
        workloads = [workloads[0]] * ncores
    elif len(workloads) != ncores:
        raise ConfigurationError(
            "%d workloads for %d cores" % (len(workloads), ncores))
    pc_text = db.get_text("PerfCounterBase")
    try:
        pc_base = int(pc_text, 0) if pc_text else None
    except ValueError:
        raise ConfigurationError(
            "PerfCounterBase: expected an address, got %r" % pc_text) from None

    kernel = Kernel()
    core_clock = kernel.clock("core", period=db.get_int("CorePeriod"))
    mem_clock = kernel.clock("mem", period=db.get_int("MemoryPeriod"))
    memory = _build_memory(db, kernel, mem_clock, preset, ncores, line_bytes)
    cores = [
        Core(kernel, "cpu%d" % i, core_clock, origin=i, ops=workloads[i],
             max_outstanding=db.get_int("MaxOutstanding"),
             l1_sets=db.get_int("L1Sets"), l1_ways=db.get_int("L1Ways"),
             line_bytes=line_bytes, pc_base=pc_base).attach(memory)
        for i in range(ncores)
    ]
    _publish_counters(kernel, cores, memory)
    return SystemModel(kernel, db, preset, cores, memory,
                       core_clock, mem_clock)
