"""Sample stream format, the sampling monitor thread, traces and stats."""

import io
import re
import struct
import time

import pytest

from chipsim.config import load_config
from chipsim.kernel import (
    Component,
    ConfigurationError,
    FAILED,
    Kernel,
    RunState,
    SUCCESS,
    TraceCategory,
)
from chipsim.monitor import (
    MAGIC,
    Monitor,
    pack_record,
    read_sample_stream,
    stats_report,
    write_stream_header,
)
from chipsim.system import build_system
from chipsim.workload import HALT_OP, delay_op, load_op, store_op, stride


def make_model(settings=None, workloads=None):
    db = load_config()
    for key, value in (settings or {}).items():
        db.set(key, str(value), "override")
    return build_system(db, workloads)


# -- stream format ------------------------------------------------------------------


def test_stream_golden_bytes():
    sink = io.BytesIO()
    write_stream_header(sink, ["a", "b"])
    sink.write(pack_record(1, [2, 3]))
    sink.write(pack_record(4, [5, 6]))
    want = (b"MGMON1\na 8\nb 8\n\n"
            + struct.pack("<3Q", 1, 2, 3) + struct.pack("<3Q", 4, 5, 6))
    assert sink.getvalue() == want


def test_stream_roundtrip_and_record_size():
    sink = io.BytesIO()
    write_stream_header(sink, ["x"])
    rows = [(0, 10), (5, 11), (5, 12), (9, 13)]
    for cycle, value in rows:
        sink.write(pack_record(cycle, [value]))
    names, parsed = read_sample_stream(sink.getvalue())
    assert names == ["x"]
    assert parsed == rows
    body = len(sink.getvalue()) - sink.getvalue().find(b"\n\n") - 2
    assert body == len(rows) * 8 * (1 + len(names))


def test_zero_variables_gives_bare_cycle_stamps():
    sink = io.BytesIO()
    write_stream_header(sink, [])
    sink.write(pack_record(7, []))
    assert sink.getvalue() == b"MGMON1\n\n" + struct.pack("<Q", 7)
    names, rows = read_sample_stream(sink.getvalue())
    assert names == []
    assert rows == [(7,)]


def test_any_record_boundary_prefix_parses():
    sink = io.BytesIO()
    write_stream_header(sink, ["v"])
    for i in range(5):
        sink.write(pack_record(i, [i * i]))
    data = sink.getvalue()
    header_len = data.find(b"\n\n") + 2
    for n in range(6):
        names, rows = read_sample_stream(data[:header_len + 16 * n])
        assert len(rows) == n


def test_bad_magic_names_byte_zero():
    with pytest.raises(ValueError, match="byte 0"):
        read_sample_stream(b"NOTMAGIC\n\n")


def test_truncated_record_names_byte_offset():
    sink = io.BytesIO()
    write_stream_header(sink, ["v"])
    sink.write(pack_record(1, [2]))
    data = sink.getvalue() + b"\x01\x02\x03"  # 3 stray bytes
    offset = len(sink.getvalue())
    with pytest.raises(ValueError, match="byte %d" % offset):
        read_sample_stream(data)


def test_bad_descriptor_line_rejected():
    with pytest.raises(ValueError, match="descriptor"):
        read_sample_stream(b"MGMON1\nname 4\n\n")
    with pytest.raises(ConfigurationError):
        write_stream_header(io.BytesIO(), ["has space"])


# -- the monitor thread ----------------------------------------------------------------


def test_monitor_unknown_counter_rejected():
    model = make_model()
    with pytest.raises(ConfigurationError, match="no published counter"):
        Monitor(model.kernel, ["bogus"], io.BytesIO())


def test_monitor_samples_at_roughly_the_configured_rate():
    model = make_model({"MemoryType": "BANKED"},
                       workloads=[[delay_op(500_000_000), HALT_OP]])
    sink = io.BytesIO()
    monitor = Monitor(model.kernel, ["master_cycle", "cpu0.ops_executed"],
                      sink, rate=500)
    monitor.start()
    duration = 0.5
    deadline = time.monotonic() + duration
    state = RunState.RUNNING
    while time.monotonic() < deadline and state is RunState.RUNNING:
        state = model.step(5_000).state
    monitor.stop()
    expected = duration * 500
    assert 0.7 * expected <= monitor.samples <= 1.3 * expected
    names, rows = read_sample_stream(sink.getvalue())
    assert names == ["master_cycle", "cpu0.ops_executed"]
    assert len(rows) == monitor.samples
    cycles = [row[0] for row in rows]
    assert cycles == sorted(cycles)
    assert cycles[-1] > cycles[0]


class _FailingSink:
    """Accepts a few writes, then breaks like a closed pipe."""

    def __init__(self, allowed):
        self.allowed = allowed
        self.data = b""

    def write(self, blob):
        if self.allowed <= 0:
            raise OSError("broken pipe")
        self.allowed -= 1
        self.data += blob


def test_sink_failure_stops_monitor_but_not_simulation(caplog):
    model = make_model({"MemoryType": "SERIAL"},
                       workloads=[stride(0, 0, 50_000)])
    sink = _FailingSink(allowed=1 + 3)  # header plus three records
    monitor = Monitor(model.kernel, ["ops_total"], sink, rate=2000)
    with caplog.at_level("WARNING", logger="chipsim.monitor"):
        monitor.start()
        result = model.run()
        time.sleep(0.01)
        monitor.stop()
    assert result.state is RunState.HALTED
    assert model.cores[0].ops_executed == 50_000
    assert monitor.samples == 3
    assert any("monitor stopped" in r.message for r in caplog.records)


# -- synchronous trace format --------------------------------------------------------


class Beacon(Component):
    """Emits one mem-category event at a fixed cycle, then halts."""

    def __init__(self, kernel, clock, when):
        super().__init__(kernel, "beacon", clock)
        self.when = when
        self.box = self.buffer("box", 1, initial=(1,))
        self.add_process("pulse", self.box, self.tick)

    def tick(self):
        if self.kernel.master_cycle == self.when:
            self.trace(TraceCategory.MEM, "hello %d", 7)
            self.box.pop()
        return SUCCESS


def test_trace_line_golden_format():
    k = Kernel()
    clk = k.clock("clk")
    Beacon(k, clk, when=42)
    sink = io.StringIO()
    k.set_trace(sink, {TraceCategory.MEM})
    assert k.run().state is RunState.HALTED
    assert sink.getvalue() == "[00000042:beacon] (beacon:pulse) m hello 7\n"
    assert k.format_calls == 1


def test_disabled_category_costs_no_formatting():
    k = Kernel()
    clk = k.clock("clk")
    Beacon(k, clk, when=3)
    sink = io.StringIO()
    k.set_trace(sink, {TraceCategory.NET})  # mem stays disabled
    k.run()
    assert sink.getvalue() == ""
    assert k.format_calls == 0


_TRACE_RE = re.compile(
    r"^\[(\d{8}):([\w.]+)\] \(([\w.]+):(\w+)\) (\w) (.*)$")


def test_trace_line_parses_back_into_five_fields():
    k = Kernel()
    clk = k.clock("clk")
    Beacon(k, clk, when=11)
    sink = io.StringIO()
    k.set_trace(sink, set(TraceCategory))
    k.run()
    m = _TRACE_RE.match(sink.getvalue().strip())
    assert m is not None
    assert m.group(1) == "00000011"
    assert m.group(2) == "beacon"
    assert (m.group(3), m.group(4)) == ("beacon", "pulse")
    assert m.group(5) == "m"
    assert m.group(6) == "hello 7"


def test_deadlock_lines_only_in_the_deadlock_report():
    k = Kernel()
    clk = k.clock("clk")
    box = Component(k, "box", clk)
    qa = box.buffer("qa", 1, initial=["a"])
    qb = box.buffer("qb", 1, initial=["b"])

    def swap(src, dst):
        def handler():
            src.front()
            if not dst.push("z"):
                box.deadlock_write("unable to push into %s", dst.path)
                return FAILED
            src.pop()
            return SUCCESS
        return handler

    box.add_process("fwd", qa, swap(qa, qb))
    box.add_process("rev", qb, swap(qb, qa))
    sink = io.StringIO()
    k.set_trace(sink, set(TraceCategory))
    result = k.run()
    assert result.state is RunState.DEADLOCK
    # the live trace carries no deadlock-category lines ...
    assert " d " not in sink.getvalue()
    # ... the report carries exactly the two diagnostics
    assert result.report.count(" d unable to push into ") == 2


# -- statistics report --------------------------------------------------------------


def test_stats_fresh_model_is_all_zeros():
    model = make_model({"MemoryType": "BANKED", "NumCores": 2})
    text = stats_report(model)
    assert "statistics at cycle 0" in text
    for line in text.splitlines():
        if line.startswith("cpu"):
            assert "ops_executed=0" in line
            assert "mem_requests=0" in line


def test_stats_counts_one_hundred_loads():
    model = make_model({"MemoryType": "SERIAL"},
                       workloads=[stride(0, 64, 100)])
    model.run()
    text = stats_report(model)
    assert "mem_requests=100" in text
    assert "loads_done=100 stores_done=0" in text
    assert "max_occupancy=" in text  # queue maxima are reported


def test_stats_banked_reports_per_bank_accesses():
    model = make_model({"MemoryType": "BANKED", "NumCores": 2},
                       workloads=[stride(0, 64, 8), stride(0x40, 128, 4)])
    model.run()
    text = stats_report(model)
    banks = [line for line in text.splitlines() if "accesses=" in line]
    assert len(banks) == 2
    total = sum(int(line.rsplit("=", 1)[1]) for line in banks)
    assert total == 12


def test_stats_coma_reports_ddr_and_hits():
    ops = [store_op(0x200, b"\x77"), load_op(0x200, 1), HALT_OP]
    model = make_model({"MemoryType": "COMA", "NumCores": 2},
                       workloads=[ops, [load_op(0x200, 1), HALT_OP]])
    model.run()
    assert model.memory.audit() == []
    text = stats_report(model)
    assert re.search(r"ddr_reads=\d+ ddr_writes=\d+ hits=\d+", text)
    assert "counter wu_created=1" in text
    assert "hops ring=" in text
