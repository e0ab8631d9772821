"""Cycle-level discrete-event simulator for many-core memory architectures.

The package is organised around a small process-network kernel (clocks,
processes, shared storages, arbitration) on top of which the memory models,
the ring-based cache-diffusion system and the trace-driven cores are built.
`load_config` + `build_system` assemble a complete simulated machine from a
configuration; the `chipsim` console script wraps the same path.
"""

from .kernel import (
    Kernel,
    Clock,
    Component,
    Buffer,
    Register,
    SingleFlag,
    Arbitrator,
    ArbitratedPort,
    Strategy,
    Result,
    ProcessState,
    RunState,
    TraceCategory,
    ConfigurationError,
    ContractViolation,
)
from .config import ConfigDb, ConfigWarning, dump_config, load_config
from .monitor import Monitor, read_sample_stream, stats_report
from .system import SystemModel, build_system

__all__ = [
    "Kernel",
    "Clock",
    "Component",
    "Buffer",
    "Register",
    "SingleFlag",
    "Arbitrator",
    "ArbitratedPort",
    "Strategy",
    "Result",
    "ProcessState",
    "RunState",
    "TraceCategory",
    "ConfigurationError",
    "ContractViolation",
    "ConfigDb",
    "ConfigWarning",
    "load_config",
    "dump_config",
    "build_system",
    "SystemModel",
    "Monitor",
    "read_sample_stream",
    "stats_report",
]
