"""Seed derivation and atomic file writes."""

import os

from hostseq.util import atomic_write_bytes, atomic_write_text, derive_seed


def test_derive_seed_deterministic():
    assert derive_seed(7, "outer", 3) == derive_seed(7, "outer", 3)


def test_derive_seed_distinct_keys():
    seeds = {
        derive_seed(7, "outer", 3),
        derive_seed(7, "outer", 4),
        derive_seed(7, "inner", 3),
        derive_seed(8, "outer", 3),
    }
    assert len(seeds) == 4


def test_derive_seed_type():
    s = derive_seed(0, "x")
    assert isinstance(s, int)
    assert s >= 0


def test_atomic_write_text(tmp_path):
    path = tmp_path / "a.txt"
    atomic_write_text(path, "hello\n")
    assert path.read_text() == "hello\n"
    atomic_write_text(path, "replaced\n")
    assert path.read_text() == "replaced\n"
    assert os.listdir(tmp_path) == ["a.txt"]  # no stray temp files


def test_atomic_write_bytes(tmp_path):
    path = tmp_path / "b.bin"
    atomic_write_bytes(path, b"\x00\x01")
    assert path.read_bytes() == b"\x00\x01"
    assert os.listdir(tmp_path) == ["b.bin"]
