"""File formats: text grids, one-column CSV signals, JSON, all written atomically.

A text grid is ``rows cols`` on the first line followed by the values in
row-major order, one row per line, at 17 significant digits so that reading
back reproduces every float exactly.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import DimensionError


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    return "%.17g" % v


def format_grid(grid) -> str:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DimensionError("text grids are 2D")
    lines = [f"{grid.shape[0]} {grid.shape[1]}"]
    lines += [" ".join(_fmt(v) for v in row) for row in grid]
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 2:
        raise DimensionError("grid file is missing its 'rows cols' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]], dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"malformed grid file: {exc}") from None
    if rows < 0 or cols < 0 or values.size != rows * cols:
        raise DimensionError(f"header says {rows}x{cols} but found {values.size} values")
    return values.reshape(rows, cols)


def write_grid(path, grid) -> None:
    atomic_write_text(path, format_grid(grid))


def read_grid(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        return parse_grid(fh.read())


def read_signal(path) -> np.ndarray:
    """One value per line, no header; blank lines are ignored."""
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        return np.array([float(ln.split(",")[0]) for ln in lines], dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"malformed signal file: {exc}") from None


def write_signal(path, x) -> None:
    atomic_write_text(path, "".join(_fmt(v) + "\n" for v in np.asarray(x, dtype=np.float64).ravel()))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv_rows(path, header, rows) -> None:
    out = [",".join(header)]
    out += [",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else _fmt(v)) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(out) + "\n")
