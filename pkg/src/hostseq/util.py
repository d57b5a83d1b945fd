"""Shared helpers: seed derivation and atomic file writes."""

import os
import tempfile

import numpy as np


def derive_seed(*keys) -> int:
    """Derive a stable child seed from a base seed plus context keys.

    Keys may be non-negative ints or strings. The derivation is pure,
    so parallel workers seeded per work unit stay schedule-independent.
    """
    entropy = []
    for k in keys:
        if isinstance(k, str):
            entropy.extend(k.encode("utf-8"))
        else:
            k = int(k)
            if k < 0:
                raise ValueError(f"seed keys must be non-negative, got {k}")
            entropy.append(k)
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temp file and rename, so readers never
    observe a partial file."""
    _atomic_write(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    _atomic_write(path, data)


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
