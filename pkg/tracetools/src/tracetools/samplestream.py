"""Reader for the binary sample streams written by the simulator monitor.

The format, byte for byte:

    MGMON1\\n            magic
    <name> <width>\\n    one descriptor per variable, width in bytes
    \\n                  blank line ends the header
    <records>           little-endian u64 master cycle, then one
                        little-endian unsigned integer per variable,
                        `width` bytes each, repeated per sample
"""

MAGIC = b"MGMON1\n"


class StreamError(Exception):
    """Corrupt or truncated input.

    `offset` is the byte position of the damage.  When the header was
    parsed completely before the damage, `names` holds the variable
    names and `records` every complete record, so callers can still
    emit the intact prefix.
    """

    def __init__(self, message, offset, names=None, records=()):
        super().__init__("%s at byte %d" % (message, offset))
        self.offset = offset
        self.names = names
        self.records = list(records)

    @property
    def header_ok(self):
        return self.names is not None


def parse_header(data):
    """-> (names, widths, body_offset); raises StreamError."""
    if data[: len(MAGIC)] != MAGIC:
        raise StreamError("not a sample stream (bad magic)", 0)
    names, widths = [], []
    pos = len(MAGIC)
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise StreamError("truncated header", pos)
        line = data[pos:end]
        if not line:
            return names, widths, end + 1
        name, sep, width_text = line.rpartition(b" ")
        try:
            width = int(width_text)
        except ValueError:
            width = 0
        if not sep or not name or width < 1 or width > 8:
            raise StreamError("malformed descriptor %r" % line.decode(
                "ascii", "replace"), pos)
        names.append(name.decode("ascii"))
        widths.append(width)
        pos = end + 1


def parse_stream(data):
    """-> (names, widths, records); records are (cycle, values) tuples.

    A truncated record tail raises StreamError carrying the names and
    every record that was complete.
    """
    names, widths, pos = parse_header(data)
    record_size = 8 + sum(widths)
    records = []
    while pos < len(data):
        if len(data) - pos < record_size:
            raise StreamError("truncated record", pos, names, records)
        cycle = int.from_bytes(data[pos:pos + 8], "little")
        pos += 8
        values = []
        for width in widths:
            values.append(int.from_bytes(data[pos:pos + width], "little"))
            pos += width
        records.append((cycle, tuple(values)))
    return names, widths, records
