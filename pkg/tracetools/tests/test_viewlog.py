"""viewlog: grid placement, ordering, collapsing, escaping, speed."""

import io
import re
import time

from tracetools.tracelines import parse_line
from tracetools.viewlog import main, render_html


def line(cycle, comp, proc, key, text):
    return "[%08d:%s] (%s) %s %s" % (cycle, comp, proc, key, text)


def rows_of(html):
    body = html.split("<tbody>", 1)[1].split("</tbody>", 1)[0]
    return re.findall(r"<tr.*?</tr>", body, re.S)


def cells_of(row):
    return re.findall(r"<td.*?</td>", row, re.S)


# -- line parsing -----------------------------------------------------------------


def test_parse_line_fields():
    ev = parse_line("[00000003:mem.root0] (mem.root0:ring) m ddr read 0x0")
    assert ev.cycle == 3
    assert ev.component == "mem.root0"
    assert ev.proc_component == "mem.root0"
    assert ev.proc_name == "ring"
    assert ev.key == "m"
    assert ev.text == "ddr read 0x0"


def test_parse_line_rejects_junk():
    assert parse_line("not a trace line") is None
    assert parse_line("[12:a] missing process field") is None
    assert parse_line("") is None


# -- grid construction ------------------------------------------------------------


def test_empty_input_is_a_valid_empty_grid():
    html = render_html("")
    assert html.startswith("<!DOCTYPE html>")
    assert "<table>" in html and "</table>" in html
    assert "<th>cycle</th>" in html
    assert rows_of(html) == []
    assert "0 unparseable lines skipped" in html


def test_fixture_events_land_in_their_cells():
    text = "\n".join([
        line(0, "beta", "beta:p", "m", "load 0x0"),
        line(1, "alpha", "alpha:q", "n", "fill 0x40"),
        line(1, "beta", "beta:p", "s", "halt"),
    ])
    html = render_html(text)
    head = html.split("<thead>", 1)[1].split("</thead>", 1)[0]
    assert re.findall(r"<th>(.*?)</th>", head) == ["cycle", "alpha", "beta"]
    rows = rows_of(html)
    assert len(rows) == 2
    cells0, cells1 = cells_of(rows[0]), cells_of(rows[1])
    assert ">0<" in cells0[0] and ">1<" in cells1[0]
    assert cells0[1] == "<td></td>"            # alpha idle at cycle 0
    assert "m load 0x0" in cells0[2]
    assert "n fill 0x40" in cells1[1]
    assert "s halt" in cells1[2]


def test_cell_keeps_input_order():
    text = "\n".join(
        line(4, "core", "core:issue", "m", "op %d" % i) for i in range(5))
    html = render_html(text)
    (row,) = rows_of(html)
    positions = [row.index("m op %d" % i) for i in range(5)]
    assert positions == sorted(positions)


def test_tooltip_holds_the_full_line():
    raw = line(7, "core", "core:issue", "m", "load 0x1000")
    html = render_html(raw)
    assert 'title="%s"' % raw in html


def test_idle_cycles_collapse_into_one_marker():
    text = "\n".join([
        line(1, "a", "a:p", "m", "x"),
        line(5, "a", "a:p", "m", "y"),
        line(7, "a", "a:p", "m", "z"),
    ])
    html = render_html(text)
    rows = rows_of(html)
    assert len(rows) == 5                       # 3 events + 2 markers
    assert "cycles 2-4 idle (3)" in rows[1]
    assert 'colspan="2"' in rows[1]
    assert "cycle 6 idle (1)" in rows[3]


def test_unparseable_lines_are_counted_not_fatal():
    text = "\n".join([
        "garbage",
        line(0, "a", "a:p", "m", "x"),
        "",                                     # blank lines don't count
        "[oops",
    ])
    html = render_html(text)
    assert "2 unparseable lines skipped" in html
    assert len(rows_of(html)) == 1


def test_markup_in_events_is_escaped():
    html = render_html(line(0, "a", "a:p", "m", "<b>&amp;</b>"))
    assert "<b>" not in html.split("<tbody>", 1)[1]
    assert "&lt;b&gt;" in html


def test_cli_writes_the_file(tmp_path):
    src = tmp_path / "run.log"
    dst = tmp_path / "run.html"
    src.write_text(line(0, "a", "a:p", "m", "x") + "\n")
    assert main([str(src), str(dst)]) == 0
    html = dst.read_text()
    assert "m x" in html and html.startswith("<!DOCTYPE html>")


def test_cli_missing_input_is_a_usage_error(tmp_path):
    err = io.StringIO()
    code = main([str(tmp_path / "absent.log"),
                 str(tmp_path / "out.html")], stderr=err)
    assert code == 2
    assert "absent.log" in err.getvalue()


def test_hundred_thousand_lines_render_quickly():
    comps = ["mem.ac%d" % i for i in range(4)]
    text = "\n".join(
        line(i // 4, comps[i % 4], comps[i % 4] + ":ring", "n",
             "forward 0x%x" % (i * 64))
        for i in range(100_000))
    started = time.monotonic()
    html = render_html(text)
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    assert "0 unparseable lines skipped" in html
