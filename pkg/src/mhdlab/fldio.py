"""Binary ``.fld`` snapshots.

Layout: ``b"MHDFLD01"``, an unsigned 64-bit little-endian header length, a UTF-8
JSON header, then one little-endian float64 block per component with x1 varying
fastest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .spectral import Grid3, Space, SpectralField, VectorField3

MAGIC = b"MHDFLD01"


def _as_arrays(fields) -> tuple[Grid3, list[str], list[np.ndarray]]:
    names, arrays, grid = [], [], None
    for name, f in fields.items():
        if isinstance(f, VectorField3):
            for i, c in enumerate(f):
                names.append(f"{name}{i + 1}")
                arrays.append(c.physical())
            g = f.grid
        elif isinstance(f, SpectralField):
            names.append(name)
            arrays.append(f.physical())
            g = f.grid
        else:
            raise TypeError(f"cannot store {type(f).__name__} as a field")
        if grid is not None and g != grid:
            raise ValueError("all components of a snapshot must share one grid")
        grid = g
    if grid is None:
        raise ValueError("empty snapshot")
    return grid, names, arrays


def write_fld(path, fields: dict, time: float = 0.0, extra: dict | None = None) -> Path:
    """Write named scalar/vector fields (vectors are split into ``name1..name3``)."""
    grid, names, arrays = _as_arrays(fields)
    header = {
        "grid": [grid.nx, grid.ny, grid.nz],
        "box": [grid.Lx, grid.Ly, grid.Lz],
        "space": Space.PHYSICAL.value,
        "components": names,
        "time": float(time),
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays:
            # x1 fastest: transpose to (i3, i2, i1) C order
            fh.write(np.ascontiguousarray(a.transpose(2, 1, 0), dtype="<f8").tobytes())
    return path


def read_fld(path) -> tuple[Grid3, dict[str, SpectralField], dict]:
    """Return the grid, the scalar components by name, and the header."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an .fld snapshot")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("space") != Space.PHYSICAL.value:
        raise ValueError("only physical-space snapshots are supported")
    nx, ny, nz = header["grid"]
    grid = Grid3(nx, ny, nz, *header["box"])
    n = grid.npoints
    data = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    names = header["components"]
    if data.size != n * len(names):
        raise ValueError(f"{path}: payload size {data.size} != {n} x {len(names)}")
    out = {}
    for i, name in enumerate(names):
        block = data[i * n : (i + 1) * n].reshape(nz, ny, nx).transpose(2, 1, 0)
        out[name] = SpectralField(grid, np.array(block, dtype=float))
    return grid, out, header


def vector_from(fields: dict[str, SpectralField], name: str) -> VectorField3:
    return VectorField3(tuple(fields[f"{name}{i}"] for i in (1, 2, 3)))
