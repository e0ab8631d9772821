"""Configuration database: parsing, precedence, provenance, round-trips."""

import pytest

from chipsim.config import (
    REGISTRY,
    ConfigWarning,
    dump_config,
    load_config,
)
from chipsim.kernel import ConfigurationError
from chipsim.system import build_system


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- defaults -----------------------------------------------------------------


def test_no_files_gives_all_defaults():
    db = load_config()
    assert db.get("MemoryType") == "BANKED"
    assert db.get_int("NumCores") == 1
    assert db.get_int("CacheLineSize") == 64
    assert db.provenance("MemoryType") == "default"


def test_empty_file_gives_all_defaults(tmp_path):
    db = load_config([write(tmp_path, "empty.ini", "")])
    assert db.get_choice("MemoryType") == "BANKED"
    assert not db.unknown_keys()


def test_every_registry_default_parses_with_its_type():
    db = load_config()
    for key in REGISTRY:
        if key.kind == "int":
            db.get_int(key.name)
        elif key.kind == "bool":
            db.get_bool(key.name)
        elif key.kind == "choice":
            assert db.get_choice(key.name) in key.choices
        else:
            db.get_text(key.name)


# -- precedence -----------------------------------------------------------------


def test_override_beats_file(tmp_path):
    path = write(tmp_path, "base.ini", "MemoryType = SERIAL\n")
    db = load_config([path], ["MemoryType=BANKED"])
    assert db.get_choice("MemoryType") == "BANKED"
    assert db.provenance("MemoryType") == "override"


def test_later_file_beats_earlier(tmp_path):
    first = write(tmp_path, "a.ini", "NumCores = 2\n")
    second = write(tmp_path, "b.ini", "NumCores = 6\n")
    db = load_config([first, second])
    assert db.get_int("NumCores") == 6
    assert db.provenance("NumCores") == "%s:1" % second


def test_duplicate_key_in_one_file_last_wins(tmp_path):
    path = write(tmp_path, "dup.ini",
                 "NumCores = 2\n"
                 "MemoryLatency = 5\n"
                 "NumCores = 8\n")
    db = load_config([path])
    assert db.get_int("NumCores") == 8
    assert db.provenance("NumCores") == "%s:3" % path


# -- file format -------------------------------------------------------------------


def test_sections_prefix_keys(tmp_path):
    path = write(tmp_path, "coma.ini",
                 "NumCores = 4\n"
                 "[coma]\n"
                 "roots = 2\n"
                 "stacked = true\n")
    db = load_config([path])
    assert db.get_int("coma.roots") == 2
    assert db.get_bool("coma.stacked") is True
    assert db.get_int("NumCores") == 4


def test_comments_and_blank_lines(tmp_path):
    path = write(tmp_path, "c.ini",
                 "# full-line comment\n"
                 "\n"
                 "NumCores = 3   # trailing comment\n"
                 "   \n")
    db = load_config([path])
    assert db.get_int("NumCores") == 3


def test_empty_value_means_unset_rule(tmp_path):
    path = write(tmp_path, "e.ini", "NumBanks =\n")
    db = load_config([path])
    assert db.get("NumBanks") == ""
    assert db.get_opt_int("NumBanks") is None


def test_keys_are_case_insensitive(tmp_path):
    path = write(tmp_path, "k.ini", "numcores = 5\n")
    db = load_config([path])
    assert db.get_int("NumCores") == 5
    assert db.get("NUMCORES") == "5"


def test_hex_integers_accepted():
    db = load_config(overrides=["PerfCounterBase=0x1000"])
    assert db.get_int("PerfCounterBase") == 0x1000


# -- parse errors ---------------------------------------------------------------------


def test_malformed_line_names_file_and_line(tmp_path):
    path = write(tmp_path, "bad.ini", "NumCores = 1\nwhat is this\n")
    with pytest.raises(ConfigurationError, match=r"bad\.ini:2"):
        load_config([path])


def test_malformed_section_header(tmp_path):
    path = write(tmp_path, "bad.ini", "[no closing\n")
    with pytest.raises(ConfigurationError, match=r"bad\.ini:1"):
        load_config([path])


def test_unreadable_file_names_the_file(tmp_path):
    missing = str(tmp_path / "nope.ini")
    with pytest.raises(ConfigurationError, match="nope.ini"):
        load_config([missing])


def test_malformed_override_rejected():
    with pytest.raises(ConfigurationError, match="override"):
        load_config(overrides=["NumCores"])


def test_bad_typed_values_name_the_key():
    db = load_config(overrides=["NumCores=ten"])
    with pytest.raises(ConfigurationError, match="NumCores"):
        db.get_int("NumCores")
    db = load_config(overrides=["coma.stacked=perhaps"])
    with pytest.raises(ConfigurationError, match="coma.stacked"):
        db.get_bool("coma.stacked")


def test_bad_choice_lists_the_alternatives():
    db = load_config(overrides=["MemoryType=FANCY"])
    with pytest.raises(ConfigurationError, match="SERIAL"):
        db.get_choice("MemoryType")


def test_bool_words():
    for word, value in (("true", True), ("Yes", True), ("ON", True),
                        ("1", True), ("false", False), ("no", False),
                        ("Off", False), ("0", False)):
        db = load_config(overrides=["coma.stacked=%s" % word])
        assert db.get_bool("coma.stacked") is value


# -- unknown keys ----------------------------------------------------------------------


def test_unknown_keys_are_kept_and_warned_at_build(tmp_path):
    path = write(tmp_path, "u.ini", "Typo = 1\nNumCores = 1\n")
    db = load_config([path])
    assert db.unknown_keys() == ["Typo"]
    assert db.get("Typo") == "1"
    with pytest.warns(ConfigWarning, match="Typo"):
        build_system(db)


# -- dump and round-trip ------------------------------------------------------------------


def test_dump_mentions_values_and_provenance(tmp_path):
    path = write(tmp_path, "d.ini", "MemoryType = SERIAL\n")
    db = load_config([path], ["NumCores=2"])
    text = dump_config(db)
    assert "MemoryType = SERIAL  # %s:1" % path in text
    assert "NumCores = 2  # override" in text
    assert "CacheLineSize = 64  # default" in text


def test_dump_reload_reproduces_the_effective_config(tmp_path):
    db = load_config(
        [write(tmp_path, "a.ini", "MemoryType = DDR\n[ddr]\nburst_cycles = 3\n")],
        ["NumCores=2", "Extra=zz"])
    reloaded = load_config([write(tmp_path, "dump.ini", dump_config(db))])
    before = [(name, value) for name, value, _ in db.effective()]
    after = [(name, value) for name, value, _ in reloaded.effective()]
    assert before == after


def test_dump_reload_builds_an_identical_system(tmp_path):
    db = load_config(overrides=["MemoryType=BANKED", "NumCores=3",
                                "NumBanks=4", "BankSelector=rightxor"])
    reloaded = load_config([write(tmp_path, "dump.ini", dump_config(db))])
    assert build_system(db).describe() == build_system(reloaded).describe()
