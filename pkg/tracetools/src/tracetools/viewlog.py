"""Render an event trace as an HTML cycle-by-component grid.

    viewlog IN.log OUT.html

Columns are the distinct component paths in sorted order; each row is
one master cycle; a cell holds that component's events for the cycle,
in input order, and hovering an event pops up the full trace line.
Runs of cycles without any event collapse into a single marker row.
Lines that do not parse are skipped and counted in the footer.
"""

from __future__ import annotations

import argparse
import sys
from html import escape

from .tracelines import parse_line

_STYLE = """\
body { font-family: sans-serif; margin: 1.5em; }
table { border-collapse: collapse; }
th, td { border: 1px solid #bbb; padding: 2px 8px; vertical-align: top; }
th { background: #eee; position: sticky; top: 0; }
td.cyc { text-align: right; font-family: monospace; color: #555; }
tr.gap td { text-align: center; color: #999; background: #fafafa; }
div.ev { font-family: monospace; white-space: nowrap; overflow: hidden;
         text-overflow: ellipsis; max-width: 24em; }
footer { margin-top: 1em; color: #777; }
"""


def render_html(text, title="trace"):
    """The complete HTML document for one trace text."""
    skipped = 0
    components = set()
    grid = {}
    for line in text.splitlines():
        event = parse_line(line)
        if event is None:
            if line.strip():
                skipped += 1
            continue
        components.add(event.component)
        cells = grid.setdefault(event.cycle, {})
        cells.setdefault(event.component, []).append(event)

    columns = sorted(components)
    parts = [
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        "<title>%s</title>\n<style>\n%s</style>\n</head>\n<body>\n"
        % (escape(title), _STYLE),
        "<table>\n<thead>\n<tr><th>cycle</th>",
    ]
    for name in columns:
        parts.append("<th>%s</th>" % escape(name))
    parts.append("</tr>\n</thead>\n<tbody>\n")

    previous = None
    for cycle in sorted(grid):
        if previous is not None and cycle > previous + 1:
            first, last = previous + 1, cycle - 1
            span = ("cycle %d" % first if first == last
                    else "cycles %d-%d" % (first, last))
            parts.append(
                "<tr class=\"gap\"><td colspan=\"%d\">... %s idle (%d)"
                "</td></tr>\n"
                % (len(columns) + 1, span, last - first + 1))
        parts.append("<tr><td class=\"cyc\">%d</td>" % cycle)
        cells = grid[cycle]
        for name in columns:
            events = cells.get(name)
            if not events:
                parts.append("<td></td>")
                continue
            parts.append("<td>")
            for event in events:
                label = ("%s %s" % (event.key, event.text)
                         if event.text else event.key)
                parts.append("<div class=\"ev\" title=\"%s\">%s</div>"
                             % (escape(event.line, quote=True),
                                escape(label)))
            parts.append("</td>")
        parts.append("</tr>\n")
        previous = cycle

    parts.append("</tbody>\n</table>\n")
    parts.append("<footer>%d unparseable lines skipped</footer>\n" % skipped)
    parts.append("</body>\n</html>\n")
    return "".join(parts)


def build_arg_parser():
    parser = argparse.ArgumentParser(
        prog="viewlog",
        description="render an event trace as an HTML cycle/component grid")
    parser.add_argument("input", metavar="IN.log",
                        help="trace text to read")
    parser.add_argument("output", metavar="OUT.html",
                        help="HTML file to write")
    return parser


def main(argv=None, stderr=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    stderr = sys.stderr if stderr is None else stderr
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        with open(args.input, "r", encoding="utf-8") as f:
            text = f.read()
        html = render_html(text, title=args.input)
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(html)
    except OSError as exc:
        print("viewlog: %s" % exc, file=stderr)
        return 2
    return 0


def console_main():
    sys.exit(main())
