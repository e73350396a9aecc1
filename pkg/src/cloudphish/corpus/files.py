"""Atomic file writes: write to a temp file in the target directory, then rename."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


HEADER_PREFIX = "# cloudphish-run "


def format_header(record: dict) -> str:
    """One comment line carrying the resolved run record as canonical JSON."""
    return HEADER_PREFIX + json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def split_header(text: str) -> tuple[dict | None, str, int]:
    """Separate leading ``#`` comment lines from a text file.

    Returns (run record or None, remaining text, number of lines skipped).
    """
    lines = text.splitlines(keepends=True)
    record = None
    n = 0
    while n < len(lines) and lines[n].startswith("#"):
        if lines[n].startswith(HEADER_PREFIX) and record is None:
            record = json.loads(lines[n][len(HEADER_PREFIX):])
        n += 1
    return record, "".join(lines[n:]), n


def read_header(path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith(HEADER_PREFIX):
        return json.loads(first[len(HEADER_PREFIX):])
    return None
