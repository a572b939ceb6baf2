"""Binary field snapshots.

Layout: 32-byte header -- magic b"PFLD", version (u32), n1, n2, n3, n4 (u32),
face code (u8), 7 padding bytes -- followed by the values as little-endian
float64 in C order (x4 fastest for volume fields; face-major for boundary
fields).  Face codes: 0 volume, 1 face x4=0, 2 face x4=1, 3 both faces.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PFLD"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIB7x")
VOLUME, FACE_LOW, FACE_HIGH, BOTH_FACES = 0, 1, 2, 3


def _expected_shape(dims, face):
    n1, n2, n3, n4 = dims
    if face == VOLUME:
        return (n1, n2, n3, n4)
    if face == BOTH_FACES:
        return (2, n1, n2, n3)
    if face in (FACE_LOW, FACE_HIGH):
        return (n1, n2, n3)
    raise ValueError(f"unknown face code {face}")


def encode(values, dims, face=VOLUME):
    values = np.asarray(values, dtype=float)
    if values.shape != _expected_shape(dims, face):
        raise ValueError(f"values of shape {values.shape} do not match dims {dims} with face {face}")
    return HEADER.pack(MAGIC, VERSION, *dims, face) + values.astype("<f8").tobytes()


def decode(data):
    if len(data) < HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, n1, n2, n3, n4, face = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    dims = (n1, n2, n3, n4)
    shape = _expected_shape(dims, face)
    count = int(np.prod(shape))
    body = data[HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(f"snapshot body has {len(body)} bytes, expected {8 * count}")
    values = np.frombuffer(body, dtype="<f8").astype(float).reshape(shape)
    return values, dims, face


def write_snapshot(path, values, grid, face=VOLUME):
    with open(path, "wb") as fh:
        fh.write(encode(values, grid.shape, face))


def read_snapshot(path):
    """Return (values, (n1, n2, n3, n4), face code)."""
    with open(path, "rb") as fh:
        return decode(fh.read())
