"""End-to-end acceptance checks for the simulator's headline properties.

Each test exercises one advertised guarantee of the whole package --
determinism, phase purity, deadlock reporting, arbitration fairness,
bank-selector quality, memory-model equivalence, coherence, counter
exactness, trace and monitor formats, and throughput -- against an
independent oracle or a golden expectation.
"""

import io
import random
import time
from collections import Counter

import pytest
from scipy import stats as scipy_stats

from chipsim import cli
from chipsim.cdma import CdmaSystem
from chipsim.config import load_config
from chipsim.kernel import (
    Component, Kernel, RunState, Strategy, TraceCategory, SUCCESS, FAILED,
)
from chipsim.monitor import Monitor, read_sample_stream, stats_report
from chipsim.selectors import SelectorKind, select_bank
from chipsim.system import build_system
from chipsim.workload import (
    HALT_OP, delay_op, load_op, read_counter_op, store_op,
)


def _model(overrides, workloads):
    return build_system(load_config(overrides=overrides), workloads)


# --- determinism -----------------------------------------------------------------


def _mixed_workload(seed, count=250):
    rng = random.Random(seed)
    ops = []
    for _ in range(count):
        r = rng.random()
        address = rng.randrange(0, 1 << 14, 8)
        if r < 0.50:
            ops.append(load_op(address))
        elif r < 0.80:
            ops.append(store_op(address, rng.randbytes(8)))
        elif r < 0.90:
            ops.append(delay_op(rng.randrange(1, 5)))
        else:
            ops.append(read_counter_op(rng.randrange(5)))
    ops.append(HALT_OP)
    return ops


def test_determinism_three_identical_runs():
    """Same config and workloads reproduce traces and statistics bit-exactly."""

    def run_once():
        workloads = [_mixed_workload(1000 + i) for i in range(16)]
        model = _model(["MemoryType=BANKED", "NumCores=16"], workloads)
        sink = io.StringIO()
        model.kernel.set_trace(sink, set(TraceCategory))
        res = model.run()
        assert res.state is RunState.HALTED
        logs = tuple((tuple(c.load_log), tuple(c.counter_log))
                     for c in model.cores)
        return sink.getvalue(), stats_report(model), logs

    start = time.perf_counter()
    first = run_once()
    second = run_once()
    third = run_once()
    elapsed = time.perf_counter() - start
    assert first[0]  # the trace is not empty
    assert first == second == third
    assert elapsed < 10.0


# --- phase purity ----------------------------------------------------------------


def _lean_workload(seed, addr_range=1 << 12):
    """A small op box whose delays stretch activity past 10^4 cycles."""
    rng = random.Random(seed)
    ops = []
    for i in range(20):
        address = rng.randrange(addr_range // 16) * 16
        ops.append(load_op(address, 8))
        if i % 3 == 0:
            ops.append(store_op(address, bytes([i & 0xFF] * 8)))
        ops.append(delay_op(500))
    ops.append(HALT_OP)
    return ops


ALL_PRESETS = ("SERIAL", "PARALLEL", "BANKED", "RANDOMBANKED",
               "DDR", "RANDOMDDR", "COMA")


@pytest.mark.parametrize("preset", ALL_PRESETS)
def test_phase_purity_over_ten_thousand_cycles(preset):
    """Acquire and Check never mutate model state, on any memory preset."""
    overrides = ["MemoryType=%s" % preset, "NumCores=2",
                 "L1Sets=2", "L1Ways=1", "CacheLineSize=16",
                 "QueueCapacity=4", "MaxOutstanding=2",
                 "coma.sets=2", "coma.ways=1", "ddr.row_lines=8"]
    model = _model(overrides, [_lean_workload(1), _lean_workload(2)])
    model.kernel.enable_purity_check()
    res = model.step(10_000)
    assert res.state is RunState.RUNNING
    assert res.cycle == 10_000


# --- deadlock detection ----------------------------------------------------------


def test_deadlock_report_names_both_parties():
    """A two-process circular wait yields a report quoting both writes."""
    k = Kernel()
    clk = k.clock("clk")
    box = Component(k, "box", clk)
    qa = box.buffer("qa", 1, initial=["x"])
    qb = box.buffer("qb", 1, initial=["y"])

    def mover(src, dst):
        def handler():
            value = src.front()
            if not dst.push(value):
                box.deadlock_write("unable to push into %s", dst.path)
                return FAILED
            src.pop()
            return SUCCESS
        return handler

    box.add_process("ab", qa, mover(qa, qb))
    box.add_process("ba", qb, mover(qb, qa))
    res = k.run()
    assert res.state is RunState.DEADLOCK
    assert res.report.startswith("deadlock detected at cycle")
    assert "unable to push into box.qa" in res.report
    assert "unable to push into box.qb" in res.report


def test_draining_workload_exits_zero(tmp_path):
    """A workload that drains halts the CLI with exit code 0."""
    wl = tmp_path / "wl.trace"
    wl.write_text("L 0 8\nS 40 8 1122334455667788\nL 40 8\nH\n")
    stdout, stderr = io.StringIO(), io.StringIO()
    code = cli.main(["-w", str(wl)], stdin=io.StringIO(),
                    stdout=stdout, stderr=stderr)
    assert code == 0
    assert "halted at cycle" in stdout.getvalue()
    assert stderr.getvalue() == ""


# --- arbitration -----------------------------------------------------------------


def _arbitration_run(n, strategy, schedule):
    """n processes follow a per-cycle request schedule; returns (cycle, winner)
    grants in commit order."""
    k = Kernel()
    clk = k.clock("clk")
    box = Component(k, "box", clk)
    arb = box.arbitrator("arb", strategy)
    cycles = len(schedule)
    wins = []
    for i in range(n):
        src = box.buffer("src%d" % i, cycles + 1, initial=["t"] * (cycles + 1))

        def make_handler(i=i, src=src):
            def handler():
                c = k.master_cycle
                if c >= cycles or i not in schedule[c]:
                    return SUCCESS  # hold: no request this cycle
                if not arb.invoke():
                    return FAILED
                src.pop()
                box.commit(lambda c=c, i=i: wins.append((c, i)))
                return SUCCESS
            return handler

        proc = box.add_process("p%d" % i, src, make_handler())
        arb.register(proc)
    res = k.step(cycles)
    assert res.state is RunState.RUNNING
    return wins


def test_priority_arbitration_exhaustive():
    """For every subset of up to 4 requesters the lowest index wins."""
    for n in range(1, 5):
        subsets = []
        for bits in range(1 << n):
            subsets.append({i for i in range(n) if bits & (1 << i)})
        wins = _arbitration_run(n, Strategy.PRIORITY, subsets)
        expected = [(c, min(s)) for c, s in enumerate(subsets) if s]
        assert wins == expected


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_cyclic_arbitration_is_fair(n):
    """k always-requesting processes each win exactly 3 of 3k cycles."""
    schedule = [set(range(n))] * (3 * n)
    wins = _arbitration_run(n, Strategy.CYCLIC, schedule)
    assert len(wins) == 3 * n
    counts = Counter(i for _, i in wins)
    assert counts == {i: 3 for i in range(n)}
    # one grant per cycle, rotating from process 0
    assert [i for _, i in wins] == [c % n for c in range(3 * n)]


@pytest.mark.parametrize("strategy", [Strategy.PRIORITY, Strategy.CYCLIC])
def test_port_entries_never_contend_when_disjoint(strategy):
    """4 processes hitting 4 distinct port entries all proceed every cycle."""
    import itertools
    perms = list(itertools.permutations(range(4)))  # 24 disjoint assignments
    k = Kernel()
    clk = k.clock("clk")
    box = Component(k, "box", clk)
    port = box.arbitrated_port("port", 4, strategy)
    grants = []
    for i in range(4):
        src = box.buffer("src%d" % i, len(perms) + 1,
                         initial=["t"] * (len(perms) + 1))

        def make_handler(i=i, src=src):
            def handler():
                c = k.master_cycle
                if c >= len(perms):
                    return SUCCESS
                entry = perms[c][i]
                if not port.invoke(entry):
                    return FAILED
                src.pop()
                box.commit(lambda c=c, i=i, e=entry: grants.append((c, i, e)))
                return SUCCESS
            return handler

        proc = box.add_process("p%d" % i, src, make_handler())
        port.register(proc)
    res = k.step(len(perms))
    assert res.state is RunState.RUNNING
    assert len(grants) == 4 * len(perms)  # nobody ever stalled
    assert set(grants) == {(c, i, perms[c][i])
                           for c in range(len(perms)) for i in range(4)}


# --- bank selectors --------------------------------------------------------------


def _oracle_bank(kind, address, banks, line_bytes):
    """Reference mapping written with plain arithmetic, no shared bit tricks."""
    line = address // line_bytes
    if kind is SelectorKind.ZERO:
        return 0
    if kind is SelectorKind.DIRECT:
        return line - (line // banks) * banks
    b = banks.bit_length() - 1
    groups = []
    v = line
    while v:
        groups.append(v % banks)
        v //= banks
    if kind is SelectorKind.DIRECT_BINARY:
        return groups[0] if groups else 0
    if kind is SelectorKind.RIGHT_XOR:
        low = groups[0] if groups else 0
        nxt = groups[1] if len(groups) > 1 else 0
        return low ^ nxt
    if kind is SelectorKind.RIGHT_ADD:
        low = groups[0] if groups else 0
        return (low + (line // banks) % banks) % banks
    if kind is SelectorKind.XOR_FOLD:
        acc = 0
        for g in groups:
            acc ^= g
        return acc
    if kind is SelectorKind.ADD_FOLD:
        return sum(groups) % banks
    raise AssertionError(kind)


_ORACLE_BANKS = {
    SelectorKind.ZERO: (1, 4, 16),
    SelectorKind.DIRECT: (3, 5, 16),
    SelectorKind.DIRECT_BINARY: (4, 16, 64),
    SelectorKind.RIGHT_XOR: (4, 16, 64),
    SelectorKind.RIGHT_ADD: (4, 16, 64),
    SelectorKind.XOR_FOLD: (4, 16, 64),
    SelectorKind.ADD_FOLD: (4, 16, 64),
}


@pytest.mark.parametrize("kind", sorted(_ORACLE_BANKS, key=lambda k: k.name))
def test_selector_matches_arithmetic_oracle(kind):
    """10^5 random addresses agree exactly with the reference mapping."""
    rng = random.Random(20_000 + kind.value)
    bank_list = _ORACLE_BANKS[kind]
    for i in range(100_000):
        address = rng.getrandbits(34)
        banks = bank_list[i % len(bank_list)]
        got = select_bank(kind, address, banks, 64)
        want = _oracle_bank(kind, address, banks, 64)
        if got != want:
            pytest.fail("%s(0x%x, %d banks): got %d, oracle %d"
                        % (kind.name, address, banks, got, want))


def test_rotation_mix_is_statistically_uniform():
    """10^6 addresses over 16 banks pass a chi-square test at p > 0.01."""
    rng = random.Random(31)
    counts = [0] * 16
    for _ in range(1_000_000):
        counts[select_bank(SelectorKind.ROTATION_MIX4,
                           rng.getrandbits(32), 16, 64)] += 1
    result = scipy_stats.chisquare(counts)
    assert result.pvalue > 0.01


# --- serial / parallel equivalence -----------------------------------------------


def _probe_trace(seed):
    """Short random trace salted with cycle-counter probes."""
    rng = random.Random(seed)
    ops = []
    for i in range(40):
        address = rng.randrange(0, 1 << 12, 8)
        if rng.random() < 0.7:
            ops.append(load_op(address))
        else:
            ops.append(store_op(address, rng.randbytes(8)))
        if i % 5 == 0:
            ops.append(read_counter_op(0))
        if rng.random() < 0.3:
            ops.append(delay_op(rng.randrange(1, 8)))
    ops.append(HALT_OP)
    return ops


def test_serial_equals_parallel_for_one_core():
    """With a single core the two flat services are cycle-identical."""

    def observe(preset, seed):
        model = _model(["MemoryType=%s" % preset, "NumCores=1"],
                       [_probe_trace(seed)])
        res = model.run()
        assert res.state is RunState.HALTED
        core = model.cores[0]
        return (res.cycle, tuple(core.load_log), tuple(core.counter_log),
                core.l1_hits, core.l1_misses, core.mem_requests,
                model.memory.loads_done, model.memory.stores_done)

    for seed in range(100):
        assert observe("SERIAL", seed) == observe("PARALLEL", seed)


# --- snooping keeps L1 copies fresh ----------------------------------------------


def _pattern(i):
    return bytes([0xA0 + i] * 8)


@pytest.mark.parametrize("preset", ["SERIAL", "PARALLEL", "BANKED"])
def test_snooping_leaves_no_stale_copy(preset):
    """Readers that warmed 16 lines see every later store; all surviving
    L1 copies equal backing memory."""
    lines = 16
    writer = [delay_op(800)]
    for i in range(lines):
        writer.append(store_op(i * 64 + 8, _pattern(i)))
    writer.append(HALT_OP)

    reader = []
    for i in range(lines):
        reader.append(load_op(i * 64 + 8))
    reader.append(delay_op(4000))
    for i in range(lines):
        reader.append(load_op(i * 64 + 8))
    reader.append(HALT_OP)

    model = _model(["MemoryType=%s" % preset, "NumCores=4"],
                   [writer, reader, reader, reader])
    res = model.run()
    assert res.state is RunState.HALTED

    backing = model.memory.backing
    for i in range(lines):
        assert backing.read(i * 64 + 8, 8) == _pattern(i)
    for core in model.cores[1:]:
        # warm pass missed at most once per line; the re-reads all hit
        assert core.l1_misses == lines
        assert core.l1_hits == lines
        last = dict(core.load_log)
        for i in range(lines):
            assert last[i * 64 + 8] == _pattern(i)
    for core in model.cores:
        for tag, state, dirty, data, _, _ in (
                core.l1.inspect_state()["lines"]):
            if state == "FULL":
                assert data == backing.read_line(tag)


# --- cache-diffusion memory ------------------------------------------------------


def _lane_value(i, line):
    return bytes([(0x10 * (i + 1) + line) & 0xFF] * 8)


def _coma_workload(i, n, lines=8):
    """Warm every line, write one private lane, then read all lanes back."""
    ops = []
    for l in range(lines):
        ops.append(load_op(l * 64 + ((i + 1) % n) * 8))
    ops.append(delay_op(1500))
    for l in range(lines):
        ops.append(store_op(l * 64 + i * 8, _lane_value(i, l)))
    ops.append(delay_op(1500))
    for l in range(lines):
        for j in range(n):
            ops.append(load_op(l * 64 + j * 8))
    ops.append(HALT_OP)
    return ops


COMA_LAYOUTS = [
    ("three_caches_one_root", 3, []),
    ("shared_cache_three_roots", 3,
     ["coma.cores_per_cache=3", "coma.roots=3"]),
    ("three_caches_three_roots", 3, ["coma.roots=3"]),
    ("stacked_six_caches", 6,
     ["coma.roots=2", "coma.stacked=true", "coma.caches_per_ring=3"]),
]


@pytest.mark.parametrize("name,n,extra",
                         COMA_LAYOUTS, ids=[l[0] for l in COMA_LAYOUTS])
def test_cdma_coherence_and_attraction(name, n, extra):
    """On every ring layout: identical copies, balanced message books, and
    re-misses satisfied on-chip without new DDR reads."""
    lines = 8
    # a 1-line L1 forces every read back to the attraction caches
    overrides = (["MemoryType=COMA", "NumCores=%d" % n,
                  "L1Sets=1", "L1Ways=1",
                  "coma.sets=8", "coma.ways=2"] + extra)
    workloads = [_coma_workload(i, n, lines) for i in range(n)]
    model = _model(overrides, workloads)
    mem = model.memory
    assert isinstance(mem, CdmaSystem)

    start = time.perf_counter()
    res = model.step(2_900)  # both write phases done, final reads not begun
    assert res.state is RunState.RUNNING
    assert mem.drained()
    ddr_reads_before_rereads = mem.ddr_reads
    res = model.run()
    elapsed = time.perf_counter() - start
    assert res.state is RunState.HALTED
    assert elapsed < 5.0

    # attraction: every re-read was satisfied from some on-chip copy
    assert mem.ddr_reads == ddr_reads_before_rereads
    assert mem.audit() == []
    assert not mem.open_reads

    expected = {}
    for l in range(lines):
        image = bytearray(64)
        for j in range(n):
            image[j * 8:(j + 1) * 8] = _lane_value(j, l)
        expected[l * 64] = bytes(image)
    copies = {}
    for ac in mem.caches:
        for tag, data, dirty, _, pins in ac.full_lines():
            assert pins == 0
            copies.setdefault(tag, set()).add(data)
    for tag, images in copies.items():
        assert len(images) == 1  # all caches agree on the bytes
        if tag in expected:
            assert images == {expected[tag]}
    for core in model.cores:
        last = dict(core.load_log)
        for l in range(lines):
            for j in range(n):
                assert last[l * 64 + j * 8] == _lane_value(j, l)


def test_stacked_ring_keeps_local_sharing_local():
    """Once a line lives on a local ring, sharing it inside that ring adds
    no global-ring hops."""
    overrides = ["MemoryType=COMA", "NumCores=6",
                 "coma.roots=2", "coma.stacked=true", "coma.caches_per_ring=3",
                 "coma.sets=8", "coma.ways=2"]
    warm = [load_op(0x0), delay_op(4000), HALT_OP]
    late = [delay_op(2000), load_op(0x0), HALT_OP]
    idle = [HALT_OP]
    model = _model(overrides, [late, late, warm, idle, idle, idle])
    mem = model.memory

    res = model.step(1_500)  # the warm fetch has fully quiesced
    assert res.state is RunState.RUNNING
    assert mem.drained()
    global_hops = mem.global_ring.hops
    local_hops = mem.local_rings[0].hops

    res = model.run()
    assert res.state is RunState.HALTED
    assert mem.global_ring.hops == global_hops
    assert mem.local_rings[0].hops > local_hops
    assert mem.caches[0].misses >= 1  # the late loads did reach the ring
    line0 = mem.backing.read_line(0x0)
    for core in model.cores[:2]:
        assert dict(core.load_log)[0x0] == line0[0:8]
    assert mem.audit() == []


# --- performance counters --------------------------------------------------------


def test_counters_match_issued_operations_exactly():
    """1000 loads + 500 stores, then counter reads through both the counter
    op and the memory-mapped window."""
    rng = random.Random(7)
    traffic = [load_op(rng.randrange(0, 1 << 14, 8)) for _ in range(1000)]
    traffic += [store_op(rng.randrange(0, 1 << 14, 8), rng.randbytes(8))
                for _ in range(500)]
    rng.shuffle(traffic)
    base = 0xF0000
    ops = traffic + [
        read_counter_op(2),      # mem_requests
        read_counter_op(1),      # ops_executed
        load_op(base + 16, 8),   # mem_requests via the mapped window
        load_op(base + 8, 8),    # ops_executed via the mapped window
        HALT_OP,
    ]
    model = _model(["MemoryType=BANKED", "NumCores=1",
                    "PerfCounterBase=0x%X" % base], [ops])
    res = model.run()
    assert res.state is RunState.HALTED

    core = model.cores[0]
    assert core.mem_requests == 1500
    assert core.l1_hits + core.l1_misses == 1500
    assert core.ops_executed == 1504  # halt is not an executed op
    assert core.counter_log == [(2, 1500), (1, 1501), (2, 1500), (1, 1503)]
    text = stats_report(model)
    assert "cpu0: cycles=%d ops_executed=1504 mem_requests=1500" \
        % core.cycles in text


# --- trace format ----------------------------------------------------------------


def _beacon(tokens):
    k = Kernel()
    clk = k.clock("clk")
    box = Component(k, "beacon", clk)
    src = box.buffer("src", len(tokens) + 1, initial=list(tokens))
    categories = {"a": TraceCategory.MEM, "b": TraceCategory.NET,
                  "c": TraceCategory.CACHE, "d": TraceCategory.SIM}

    def pulse():
        token = src.front()
        src.pop()
        box.trace(categories[token], "token %s seq %d", token, 7)
        return SUCCESS

    box.add_process("pulse", src, pulse)
    return k


def test_trace_lines_follow_the_documented_shape():
    k = _beacon("abcd")
    sink = io.StringIO()
    k.set_trace(sink, set(TraceCategory))
    res = k.run()
    assert res.state is RunState.HALTED
    assert sink.getvalue() == (
        "[00000000:beacon] (beacon:pulse) m token a seq 7\n"
        "[00000001:beacon] (beacon:pulse) n token b seq 7\n"
        "[00000002:beacon] (beacon:pulse) c token c seq 7\n"
        "[00000003:beacon] (beacon:pulse) s token d seq 7\n")
    assert k.format_calls == 4


def test_disabled_tracing_never_formats():
    k = _beacon("abcd")
    sink = io.StringIO()
    k.set_trace(sink, ())
    res = k.run()
    assert res.state is RunState.HALTED
    assert sink.getvalue() == ""
    assert k.format_calls == 0


# --- monitor sampling ------------------------------------------------------------


def test_monitor_holds_its_sampling_rate():
    """Two seconds at 1000 samples/s lands within 15% and keeps the
    fixed record size."""
    model = _model(["NumCores=1"], [[delay_op(1_000_000_000), HALT_OP]])
    sink = io.BytesIO()
    monitor = Monitor(model.kernel, ["master_cycle", "ops_total"],
                      sink, rate=1000)
    start = time.perf_counter()
    monitor.start()
    while time.perf_counter() - start < 2.0:
        model.step(20_000)
    monitor.stop()
    duration = time.perf_counter() - start

    data = sink.getvalue()
    names, rows = read_sample_stream(data)
    assert names == ["master_cycle", "ops_total"]
    header_len = data.index(b"\n\n") + 2
    assert (len(data) - header_len) % (8 * (1 + len(names))) == 0
    expected = 1000 * duration
    assert abs(len(rows) - expected) <= 0.15 * expected + 2
    cycles = [row[1] for row in rows]
    assert cycles == sorted(cycles)


# --- throughput ------------------------------------------------------------------


def test_throughput_smoke_report(capsys):
    """Non-gating: print simulated operations per wall second."""
    per_core = 1500
    workloads = []
    for i in range(16):
        ops = [load_op(((i * 997 + j * 8) % (1 << 16)) & ~0x7)
               for j in range(per_core)]
        ops.append(HALT_OP)
        workloads.append(ops)
    model = _model(["MemoryType=BANKED", "NumCores=16"], workloads)
    start = time.perf_counter()
    res = model.run()
    elapsed = time.perf_counter() - start
    assert res.state is RunState.HALTED
    total = sum(core.ops_executed for core in model.cores)
    assert total == 16 * (per_core)
    rate = total / elapsed
    with capsys.disabled():
        print("\n[throughput] %d ops in %.2fs = %d ops/s "
              "(soft target: >= 50000)" % (total, elapsed, int(rate)))
    assert rate > 0
