"""Deterministic CSV / JSON / plot-data writers (floats at 17 significant digits)."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def write_csv(path, rows: list[dict], columns: tuple[str, ...] | list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(fmt(r.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> list[dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def _json(obj, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_json(str(k), 0)}: {_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.number, bool)) for v in seq):
            return "[" + ", ".join(_json(v, 0) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        return f'"{fmt(obj)}"'  # JSON has no literal for non-finite numbers
    return fmt(obj)


def to_json(obj) -> str:
    return _json(obj, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj))
    return path


def write_table(path, columns: list[str], data) -> Path:
    """Whitespace-separated numeric table with a ``#`` header; loads with ``numpy.loadtxt``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != len(columns):
        raise ValueError("column count mismatch")
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(fmt(v) for v in row) for row in data]
    path.write_text("\n".join(lines) + "\n")
    return path
