"""CSV tables with ``#`` metadata lines, flat key=value configs, atomic writes."""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError

NUM_FMT = "%.6g"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, float, np.integer, np.floating)):
        return NUM_FMT % x
    return str(x)


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_table(header: Sequence[str], columns: Sequence[Iterable], meta: Mapping | None = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={fmt(v)}\n")
    buf.write(",".join(header) + "\n")
    for row in zip(*columns):
        buf.write(",".join(fmt(x) for x in row) + "\n")
    return buf.getvalue()


def write_table(path, header, columns, meta=None) -> None:
    atomic_write(path, format_table(header, columns, meta))


def read_table(path) -> tuple[list[str], np.ndarray, dict[str, str]]:
    """Return ``(header, data, meta)``; ``data`` has one column per header field."""
    meta: dict[str, str] = {}
    header: list[str] | None = None
    rows = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, sep, v = line[1:].partition("=")
                if sep:
                    meta[k.strip()] = v.strip()
                continue
            if header is None:
                header = [h.strip() for h in line.split(",")]
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise DomainError(f"{path}:{n}: expected {len(header)} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DomainError(f"{path}:{n}: non-numeric value") from exc
    if header is None:
        raise DomainError(f"{path}: no header line")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, data, meta


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use ``_`` or ``-``."""
    out: dict[str, str] = {}
    with open(path) as f:
        for n, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            k, sep, v = line.partition("=")
            if not sep or not k.strip():
                raise DomainError(f"{path}:{n}: expected key = value")
            out[k.strip().replace("-", "_")] = v.strip()
    return out
