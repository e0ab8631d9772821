"""Configuration database and file format.

A configuration is an ordered collection of textual `key = value` entries.
Keys are dotted paths and case-insensitive; later definitions override
earlier ones, and command-line overrides beat files.  The canonical key
registry below names every key the system builder understands, with type
and default; unknown keys are kept in the database and reported with a
warning when a system is built from it.

File format, one entry per line:

    # a comment
    MemoryType = BANKED         # trailing comments are stripped
    [coma]                      # section header: keys below gain `coma.`
    roots = 2                   # stored as coma.roots

Values run to the end of the line (minus comments) and may be empty; an
empty value for an optional key means "use the built-in rule".
"""

from __future__ import annotations

import re

from .kernel import ConfigurationError


class ConfigWarning(UserWarning):
    """Raised as a warning for suspicious but non-fatal configuration."""


MEMORY_TYPES = ("SERIAL", "PARALLEL", "BANKED", "RANDOMBANKED",
                "DDR", "RANDOMDDR", "COMA")


class ConfigKey:
    """One canonical key: its spelling, value type, default and purpose."""

    __slots__ = ("name", "kind", "default", "help", "choices")

    def __init__(self, name, kind, default, help, choices=()):
        self.name = name
        self.kind = kind
        self.default = default
        self.help = help
        self.choices = choices

    def __repr__(self):
        return "ConfigKey(%s, %s, default=%r)" % (self.name, self.kind,
                                                  self.default)


REGISTRY = (
    ConfigKey("MemoryType", "choice", "BANKED",
              "memory system preset", MEMORY_TYPES),
    ConfigKey("NumCores", "int", "1", "number of cores"),
    ConfigKey("CacheLineSize", "int", "64", "cache line size in bytes"),
    ConfigKey("CorePeriod", "int", "1",
              "master cycles per core-domain cycle"),
    ConfigKey("MemoryPeriod", "int", "1",
              "master cycles per memory-domain cycle"),
    ConfigKey("L1Sets", "int", "16", "L1 sets per core (power of two)"),
    ConfigKey("L1Ways", "int", "4", "L1 ways per set"),
    ConfigKey("MaxOutstanding", "int", "4",
              "outstanding memory requests per core"),
    ConfigKey("PerfCounterBase", "text", "",
              "base address of the memory-mapped counter window"
              " (empty disables it)"),
    ConfigKey("MemoryLatency", "int", "10",
              "access latency of the flat memory models, memory cycles"),
    ConfigKey("QueueCapacity", "int", "16",
              "request queue capacity per memory service"),
    ConfigKey("NumBanks", "text", "",
              "bank count for BANKED presets (empty: one per core)"),
    ConfigKey("NumChannels", "text", "",
              "channel count for DDR presets (empty: one per core)"),
    ConfigKey("BankSelector", "text", "",
              "bank selection strategy override for BANKED/DDR"
              " (empty: preset rule)"),
    ConfigKey("MonitorRate", "int", "1000",
              "monitor samples per second of wall time"),
    ConfigKey("MonitorVars", "text", "",
              "comma-separated published counters to sample"
              " (empty: all of them)"),
    ConfigKey("ddr.activate_cycles", "int", "5", "DDR row activate cost"),
    ConfigKey("ddr.column_cycles", "int", "5", "DDR column access cost"),
    ConfigKey("ddr.precharge_cycles", "int", "5", "DDR precharge cost"),
    ConfigKey("ddr.burst_cycles", "int", "2", "DDR data burst occupancy"),
    ConfigKey("ddr.row_lines", "int", "128",
              "cache lines per DDR row (power of two)"),
    ConfigKey("coma.cores_per_cache", "int", "1",
              "cores sharing one attraction cache"),
    ConfigKey("coma.roots", "int", "1", "root directories on the ring"),
    ConfigKey("coma.stacked", "bool", "false",
              "split the caches over local rings joined by a global ring"),
    ConfigKey("coma.caches_per_ring", "text", "",
              "attraction caches per local ring (empty: all in one)"),
    ConfigKey("coma.sets", "int", "512", "attraction cache sets"),
    ConfigKey("coma.ways", "int", "4", "attraction cache ways"),
    ConfigKey("coma.selector", "text", "xorfold",
              "set selection strategy of the attraction caches"),
    ConfigKey("coma.link_capacity", "int", "2", "ring link buffer depth"),
    ConfigKey("coma.hit_latency", "int", "1",
              "attraction cache service latency, memory cycles"),
    ConfigKey("coma.ddr_latency", "int", "10",
              "external memory latency behind the roots, memory cycles"),
    ConfigKey("coma.queue_capacity", "int", "16",
              "attraction cache request queue capacity"),
)

_BY_KEY = {k.name.lower(): k for k in REGISTRY}

_TRUE_WORDS = ("true", "yes", "on", "1")
_FALSE_WORDS = ("false", "no", "off", "0")

_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_SECTION_RE = re.compile(r"\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")


class ConfigDb:
    """Ordered, case-insensitive key/value store with provenance.

    Every value is text; typed accessors parse on demand and fall back to
    the registry default when a key was never set.  `provenance` records
    where the winning definition came from: "default", "override", or
    "file:line".
    """

    def __init__(self):
        self._entries = {}      # lower key -> (display name, value, origin)
        self._order = []        # lower keys, first-definition order

    # -- population ----------------------------------------------------------

    def set(self, key, value, provenance):
        if not _KEY_RE.match(key):
            raise ConfigurationError("bad configuration key: %r" % key)
        lower = key.lower()
        reg = _BY_KEY.get(lower)
        display = reg.name if reg is not None else key
        if lower not in self._entries:
            self._order.append(lower)
        self._entries[lower] = (display, value, provenance)

    def is_set(self, key):
        return key.lower() in self._entries

    def unknown_keys(self):
        """Display names of set keys that are not in the registry."""
        return [self._entries[lk][0] for lk in self._order
                if lk not in _BY_KEY]

    # -- untyped access ------------------------------------------------------

    def get(self, key, default=None):
        entry = self._entries.get(key.lower())
        if entry is not None:
            return entry[1]
        reg = _BY_KEY.get(key.lower())
        if reg is not None:
            return reg.default
        return default

    def provenance(self, key):
        entry = self._entries.get(key.lower())
        if entry is not None:
            return entry[2]
        if key.lower() in _BY_KEY:
            return "default"
        return None

    def effective(self):
        """All keys in registry order, then unknown keys in set order,
        as (display name, value, provenance) triples."""
        out = [(k.name, self.get(k.name), self.provenance(k.name))
               for k in REGISTRY]
        for lk in self._order:
            if lk not in _BY_KEY:
                out.append(self._entries[lk])
        return out

    # -- typed access ----------------------------------------------------------

    def _require(self, key):
        value = self.get(key)
        if value is None:
            raise ConfigurationError("unknown configuration key: %s" % key)
        return value

    def get_text(self, key):
        return self._require(key).strip()

    def get_int(self, key):
        text = self._require(key).strip()
        try:
            return int(text, 0)
        except ValueError:
            raise ConfigurationError(
                "%s: expected an integer, got %r" % (key, text)) from None

    def get_opt_int(self, key):
        """An integer, or None when the value is empty."""
        if not self._require(key).strip():
            return None
        return self.get_int(key)

    def get_bool(self, key):
        text = self._require(key).strip().lower()
        if text in _TRUE_WORDS:
            return True
        if text in _FALSE_WORDS:
            return False
        raise ConfigurationError(
            "%s: expected a boolean, got %r" % (key, text))

    def get_choice(self, key):
        reg = _BY_KEY.get(key.lower())
        if reg is None or reg.kind != "choice":
            raise ConfigurationError("%s is not a choice key" % key)
        text = self._require(key).strip().upper()
        if text not in reg.choices:
            raise ConfigurationError(
                "%s must be one of %s, got %r"
                % (reg.name, ", ".join(reg.choices), text))
        return text


def _parse_file(db, path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigurationError(
            "cannot read config file %s: %s" % (path, exc)) from None
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = _SECTION_RE.match(line)
            if m is None:
                raise ConfigurationError(
                    "%s:%d: malformed section header %r"
                    % (path, lineno, raw.strip()))
            section = m.group(1) + "."
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not _KEY_RE.match(key):
            raise ConfigurationError(
                "%s:%d: expected `key = value`, got %r"
                % (path, lineno, raw.strip()))
        db.set(section + key, value.strip(), "%s:%d" % (path, lineno))


def load_config(paths=(), overrides=()):
    """Merge config files and `KEY=VALUE` overrides into a ConfigDb.

    Files are read in order and later definitions win; overrides are
    applied last and beat everything.
    """
    db = ConfigDb()
    for path in paths:
        _parse_file(db, path)
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not _KEY_RE.match(key):
            raise ConfigurationError(
                "override %r: expected KEY=VALUE" % item)
        db.set(key, value.strip(), "override")
    return db


def dump_config(db):
    """The effective configuration as reloadable text.

    Every registry key appears with its effective value, then any unknown
    keys; the provenance of each value rides in a trailing comment.
    Feeding the text back through load_config() reproduces the same
    effective configuration.
    """
    lines = ["# effective configuration"]
    for name, value, provenance in db.effective():
        lines.append("%s = %s  # %s" % (name, value, provenance))
    return "\n".join(lines) + "\n"
