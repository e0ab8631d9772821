"""Command-line front-end: flags, batch runs, and the interactive prompt.

Batch mode builds the model from the config files/overrides, runs it to
completion (or to the `-n` cycle limit) and exits 0 on a clean halt, 1 on
deadlock (report on standard error) and 2 on any configuration problem.
Interactive mode (`-i`) reads commands from standard input instead:

    run                  advance until halt, deadlock or a breakpoint
    step [N]             advance N cycles (default 1)
    trace on|off CAT     toggle a trace category (mem net deadlock sim cache)
    break CYCLE          stop `run` when the master cycle reaches CYCLE
    inspect PATH         dump a component's registered state
    stats                print the statistics report
    dump-config          print the effective configuration
    quit                 leave the interpreter
"""

from __future__ import annotations

import argparse
import sys
from contextlib import ExitStack

from .config import dump_config, load_config
from .kernel import (
    ConfigurationError,
    ContractViolation,
    RunState,
    TraceCategory,
    trace_category,
)
from .monitor import Monitor, stats_report
from .system import build_system
from .workload import generate, parse_trace


def build_arg_parser():
    parser = argparse.ArgumentParser(
        prog="chipsim",
        description="cycle-level simulator for many-core memory architectures")
    parser.add_argument("-c", metavar="FILE", action="append", default=[],
                        dest="configs",
                        help="configuration file (repeatable; later files win)")
    parser.add_argument("-o", metavar="KEY=VALUE", action="append", default=[],
                        dest="overrides",
                        help="configuration override (repeatable; beats files)")
    parser.add_argument("-t", metavar="FILE", dest="trace",
                        help="write trace events to FILE (all categories)")
    parser.add_argument("-m", metavar="FILE", dest="monitor",
                        help="sample counters to FILE while running"
                             " (MonitorVars / MonitorRate)")
    parser.add_argument("-w", metavar="FILE|gen:SPEC", action="append",
                        default=[], dest="workloads",
                        help="workload per core: trace file or generator"
                             " such as gen:stride(0,64,100) (repeatable)")
    parser.add_argument("-i", action="store_true", dest="interactive",
                        help="interactive prompt instead of a batch run")
    parser.add_argument("-n", metavar="CYCLES", type=int, dest="cycles",
                        help="stop the batch run after CYCLES master cycles")
    return parser


def _load_workloads(specs):
    loads = []
    for spec in specs:
        if spec.startswith("gen:"):
            loads.append(generate(spec[4:]))
            continue
        try:
            with open(spec, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigurationError(
                "cannot read workload file %s: %s" % (spec, exc)) from None
        loads.append(parse_trace(text))
    return loads or None


def _monitor_names(db, kernel):
    text = db.get_text("MonitorVars")
    if text:
        return [name.strip() for name in text.split(",") if name.strip()]
    return sorted(kernel.published)


def _report_stop(result, stdout, stderr):
    if result.state is RunState.HALTED:
        print("halted at cycle %d" % result.cycle, file=stdout)
    elif result.state is RunState.DEADLOCK:
        print(result.report, file=stderr)
        print("deadlock at cycle %d" % result.cycle, file=stdout)
    elif result.state is RunState.BREAKPOINT:
        print("breakpoint at cycle %d" % result.cycle, file=stdout)
    else:
        print("at cycle %d" % result.cycle, file=stdout)


def _batch(model, cycles, stdout, stderr, monitor):
    if monitor is not None:
        monitor.start()
    try:
        result = model.step(cycles)
    finally:
        if monitor is not None:
            monitor.stop()
    _report_stop(result, stdout, stderr)
    print(stats_report(model), end="", file=stdout)
    return 1 if result.state is RunState.DEADLOCK else 0


def _repl(model, db, stdin, stdout, stderr, monitor):
    kernel = model.kernel
    deadlocked = False
    prompt = stdin.isatty() if hasattr(stdin, "isatty") else False
    if monitor is not None:
        monitor.start()
    try:
        while True:
            if prompt:
                stdout.write("chipsim> ")
                stdout.flush()
            line = stdin.readline()
            if not line:
                break
            tokens = line.split()
            if not tokens:
                continue
            command, args = tokens[0], tokens[1:]
            try:
                if command == "quit":
                    break
                elif command == "run":
                    result = model.run()
                    deadlocked |= result.state is RunState.DEADLOCK
                    _report_stop(result, stdout, stderr)
                elif command == "step":
                    count = int(args[0]) if args else 1
                    result = model.step(count)
                    deadlocked |= result.state is RunState.DEADLOCK
                    _report_stop(result, stdout, stderr)
                elif command == "trace" and len(args) == 2:
                    category = trace_category(args[1])
                    if args[0] == "on":
                        if kernel.trace_sink is None:
                            kernel.trace_sink = stdout
                        kernel.enable_category(category)
                        print("tracing %s" % args[1], file=stdout)
                    elif args[0] == "off":
                        kernel.disable_category(category)
                        print("not tracing %s" % args[1], file=stdout)
                    else:
                        print("usage: trace on|off CATEGORY", file=stdout)
                elif command == "break" and len(args) == 1:
                    cycle = int(args[0])
                    kernel.breakpoints.add(cycle)
                    print("break at cycle %d" % cycle, file=stdout)
                elif command == "inspect" and len(args) == 1:
                    print(kernel.inspect(args[0]), file=stdout)
                elif command == "stats":
                    print(stats_report(model), end="", file=stdout)
                elif command == "dump-config":
                    print(dump_config(db), end="", file=stdout)
                else:
                    print("unknown command: %s (try: run, step, trace,"
                          " break, inspect, stats, dump-config, quit)"
                          % " ".join(tokens), file=stdout)
            except (ValueError, ConfigurationError) as exc:
                print("error: %s" % exc, file=stdout)
    finally:
        if monitor is not None:
            monitor.stop()
    return 1 if deadlocked else 0


def main(argv=None, stdin=None, stdout=None, stderr=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_arg_parser()
    if not argv:
        parser.print_usage(stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        db = load_config(args.configs, args.overrides)
        model = build_system(db, _load_workloads(args.workloads))
        with ExitStack() as stack:
            if args.trace:
                sink = stack.enter_context(
                    open(args.trace, "w", encoding="utf-8"))
                enabled = () if args.interactive else set(TraceCategory)
                model.kernel.set_trace(sink, enabled)
            monitor = None
            if args.monitor:
                msink = stack.enter_context(open(args.monitor, "wb"))
                monitor = Monitor(model.kernel,
                                  _monitor_names(db, model.kernel),
                                  msink, rate=db.get_int("MonitorRate"))
            if args.interactive:
                return _repl(model, db, stdin, stdout, stderr, monitor)
            return _batch(model, args.cycles, stdout, stderr, monitor)
    except (ConfigurationError, ContractViolation, OSError) as exc:
        print("error: %s" % exc, file=stderr)
        return 2


def console_main():
    sys.exit(main())
