"""Binary container shared by the VCAF (features) and VCOF (coefficients) files.

Layout, all little-endian::

    magic    4 ASCII bytes
    version  u32
    rows     u32   (frame count T)
    cols     u32   (dimension D)
    payload  rows * cols float32, row-major
"""

import struct

import numpy as np

from .errors import FormatError

VERSION = 1
HEADER = struct.Struct("<4sIII")


def encode_matrix(magic, array):
    array = np.asarray(array)
    if array.ndim != 2:
        raise FormatError(f"{magic}: payload must be 2-D, got shape {array.shape}")
    payload = np.ascontiguousarray(array, dtype="<f4")
    rows, cols = payload.shape
    return HEADER.pack(magic.encode("ascii"), VERSION, rows, cols) + payload.tobytes()


def decode_matrix(magic, data, expected_cols=None, source="<bytes>"):
    if len(data) < HEADER.size:
        raise FormatError(
            f"{source}: header truncated, expected {HEADER.size} bytes, got {len(data)}"
        )
    found, version, rows, cols = HEADER.unpack_from(data)
    if found != magic.encode("ascii"):
        raise FormatError(f"{source}: bad magic {found!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}, expected {VERSION}")
    if expected_cols is not None and cols != expected_cols:
        raise FormatError(f"{source}: dimension D={cols}, expected {expected_cols}")
    expected = HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(
            f"{source}: payload size mismatch, expected {expected} bytes, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=HEADER.size)
    return values.reshape(rows, cols).astype(np.float32)


def write_matrix(path, magic, array):
    with open(path, "wb") as fh:
        fh.write(encode_matrix(magic, array))


def read_matrix(path, magic, expected_cols=None):
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_matrix(magic, data, expected_cols, source=str(path))


def read_header(path, magic):
    """Return ``(rows, cols)`` without loading the payload."""
    with open(path, "rb") as fh:
        data = fh.read(HEADER.size)
    if len(data) < HEADER.size:
        raise FormatError(f"{path}: header truncated")
    found, version, rows, cols = HEADER.unpack(data)
    if found != magic.encode("ascii"):
        raise FormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return rows, cols
