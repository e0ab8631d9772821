"""Parser for the simulator's synchronous event-trace lines.

One event per line:

    [00001234:mem.root0] (mem.root0:ring) m ddr read 0x0

The fields are the master cycle (zero-padded decimal), the component
that owns the event, the component and name of the process that caused
it, the category key, and the message text.
"""

from __future__ import annotations

import re
from collections import namedtuple

TraceEvent = namedtuple(
    "TraceEvent", "cycle component proc_component proc_name key text line")

_LINE_RE = re.compile(
    r"\[(\d+):([^\]\s]+)\] "
    r"\(([^:\s)]+):([^\s)]+)\) "
    r"(\S+)(?: (.*))?$")


def parse_line(line):
    """-> TraceEvent, or None when the line does not follow the format."""
    m = _LINE_RE.match(line)
    if m is None:
        return None
    cycle, component, proc_component, proc_name, key, text = m.groups()
    return TraceEvent(int(cycle), component, proc_component, proc_name,
                      key, text or "", line)
