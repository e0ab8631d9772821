"""Offline analysis tools for simulator output.

`readtrace` converts the monitor's binary sample stream to text or CSV,
optionally folding windows of records into aggregate rows; `viewlog`
renders an event trace as an HTML cycle-by-component grid.  Both tools
consume only the on-disk formats, so they work on any file that follows
them, with no simulator installation required.
"""
