"""Binary field dumps and radial CSV profiles."""
from __future__ import annotations

import csv
import struct

import numpy as np

from .spectral import Field, Grid

MAGIC = b"FCQ1"
_HEADER = struct.Struct("<4sIQd")


def write_field(path, u: Field):
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.dim, g.points_per_axis, g.half_width))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError("truncated field header")
        magic, dim, n, L = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    g = Grid(int(dim), int(n), float(L))
    if data.size != g.size:
        raise ValueError(f"expected {g.size} values, found {data.size}")
    return Field(g, data.astype(float).reshape(g.shape))


def write_radial_csv(path, radii, values, header=("radius", "value")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(radii, values):
            w.writerow([repr(float(x)) for x in row])


def read_radial_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], data[:, 1]
