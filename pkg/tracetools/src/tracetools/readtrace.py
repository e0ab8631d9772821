"""Convert a binary sample stream to text or CSV, optionally aggregated.

    readtrace [--csv] [--reduce F:W] FILE

The default output is one space-separated row per record, preceded by a
header row naming the columns: the master cycle, then one column per
sampled variable.  `--csv` switches to comma-separated values with the
same mandatory header row.

`--reduce mean:10` (also `sum` or `max`) folds non-overlapping windows
of ten records into one row each.  A window's cycle column is the cycle
of its first record; every variable column is aggregated over the
window; a final `records` column counts the window's records, which
flags a short trailing window.

Corrupt input is diagnosed with its byte offset on standard error and
exits with status 1; every record before the damage is still written.
"""

from __future__ import annotations

import argparse
import sys

from .samplestream import StreamError, parse_stream

REDUCERS = ("mean", "sum", "max")


def build_arg_parser():
    parser = argparse.ArgumentParser(
        prog="readtrace",
        description="convert a monitor sample stream to text or CSV")
    parser.add_argument("file", metavar="FILE",
                        help="binary sample stream to read")
    parser.add_argument("--csv", action="store_true",
                        help="comma-separated output instead of columns")
    parser.add_argument("--reduce", metavar="F:W", dest="reduce",
                        help="aggregate windows of W records with F"
                             " (mean, sum or max)")
    return parser


def parse_reduce_spec(spec):
    """-> (function name, window); raises ValueError on a bad spec."""
    fn, sep, window_text = spec.partition(":")
    fn = fn.strip().lower()
    if not sep or fn not in REDUCERS:
        raise ValueError(
            "expected F:W with F one of %s" % ", ".join(REDUCERS))
    try:
        window = int(window_text)
    except ValueError:
        raise ValueError("window %r is not a number" % window_text) from None
    if window < 1:
        raise ValueError("window must be >= 1")
    return fn, window


def reduce_records(records, fn, window):
    """Fold non-overlapping windows into (cycle, values, count) rows.

    The cycle is the first cycle of the window; the values aggregate
    each variable column; the count is the number of records folded,
    less than `window` only for a short trailing window.
    """
    rows = []
    for start in range(0, len(records), window):
        chunk = records[start:start + window]
        columns = zip(*(values for _, values in chunk))
        if fn == "mean":
            agg = [_exact(sum(c) / len(chunk)) for c in columns]
        elif fn == "sum":
            agg = [sum(c) for c in columns]
        else:
            agg = [max(c) for c in columns]
        rows.append((chunk[0][0], tuple(agg), len(chunk)))
    return rows


def _exact(value):
    """Means of integers print as integers when nothing was lost."""
    return int(value) if value.is_integer() else value


def _write_rows(out, names, rows, sep, counted):
    header = ["cycle"] + list(names) + (["records"] if counted else [])
    out.write(sep.join(header) + "\n")
    for row in rows:
        cycle, values = row[0], row[1]
        fields = [str(cycle)] + [repr(v) if isinstance(v, float) else str(v)
                                 for v in values]
        if counted:
            fields.append(str(row[2]))
        out.write(sep.join(fields) + "\n")


def render(names, records, *, csv=False, reduce_spec=None, out):
    sep = "," if csv else " "
    if reduce_spec is None:
        _write_rows(out, names, records, sep, counted=False)
    else:
        fn, window = reduce_spec
        _write_rows(out, names, reduce_records(records, fn, window), sep,
                    counted=True)


def main(argv=None, stdout=None, stderr=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    reduce_spec = None
    if args.reduce is not None:
        try:
            reduce_spec = parse_reduce_spec(args.reduce)
        except ValueError as exc:
            print("readtrace: bad --reduce spec: %s" % exc, file=stderr)
            return 2
    try:
        with open(args.file, "rb") as f:
            data = f.read()
    except OSError as exc:
        print("readtrace: %s" % exc, file=stderr)
        return 2
    try:
        names, _, records = parse_stream(data)
    except StreamError as exc:
        if exc.header_ok:
            render(exc.names, exc.records, csv=args.csv,
                   reduce_spec=reduce_spec, out=stdout)
        print("readtrace: %s" % exc, file=stderr)
        return 1
    render(names, records, csv=args.csv, reduce_spec=reduce_spec, out=stdout)
    return 0


def console_main():
    sys.exit(main())
