import struct

import numpy as np
import pytest

from fchoquard import fieldio
from fchoquard.spectral import Field, Grid


@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16), (3, 8)])
def test_round_trip(tmp_path, rng, dim, n):
    g = Grid(dim, n, 2.5)
    u = Field(g, rng.standard_normal(g.shape))
    path = tmp_path / "u.fcq"
    fieldio.write_field(path, u)
    v = fieldio.read_field(path)
    assert v.grid == g
    assert np.array_equal(v.values, u.values)


def test_layout(tmp_path):
    g = Grid(2, 4, 1.0)
    u = Field(g, np.arange(16.0))
    path = tmp_path / "u.fcq"
    fieldio.write_field(path, u)
    raw = path.read_bytes()
    assert raw[:4] == b"FCQ1"
    assert struct.unpack("<IQd", raw[4:24]) == (2, 4, 1.0)
    assert np.array_equal(np.frombuffer(raw[24:], "<f8"), np.arange(16.0))


def test_bad_files(tmp_path):
    p = tmp_path / "bad.fcq"
    p.write_bytes(b"FCQ")
    with pytest.raises(ValueError, match="truncated"):
        fieldio.read_field(p)
    p.write_bytes(struct.pack("<4sIQd", b"NOPE", 1, 4, 1.0) + b"\0" * 32)
    with pytest.raises(ValueError, match="magic"):
        fieldio.read_field(p)
    p.write_bytes(struct.pack("<4sIQd", b"FCQ1", 1, 4, 1.0) + b"\0" * 24)
    with pytest.raises(ValueError, match="expected 4"):
        fieldio.read_field(p)


def test_radial_csv(tmp_path):
    r = np.linspace(0, 3, 7)
    v = np.exp(-r) / 3
    p = tmp_path / "prof.csv"
    fieldio.write_radial_csv(p, r, v)
    assert p.read_text().splitlines()[0] == "radius,value"
    r2, v2 = fieldio.read_radial_csv(p)
    assert np.array_equal(r, r2) and np.array_equal(v, v2)
