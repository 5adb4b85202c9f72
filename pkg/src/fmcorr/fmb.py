"""Dense matrix container ("FMB") and small key=value manifests.

Layout: 8-byte magic ``FMBMAT01``, little-endian uint64 rows and cols, then
rows*cols little-endian float64 values in row-major order.
"""

import hashlib
import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"FMBMAT01"
_HEADER = struct.Struct("<8sQQ")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def encode_matrix(matrix):
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got {a.ndim}-D")
    rows, cols = a.shape
    return _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(a, dtype="<f8").tobytes()


def decode_matrix(data):
    if len(data) < _HEADER.size:
        raise FormatError("truncated FMB header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad FMB magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise FormatError(f"FMB payload size {len(data)} does not match header ({expected} bytes)")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return values.astype(np.float64).reshape(rows, cols)


def write_matrix(path, matrix):
    data = encode_matrix(matrix)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return data


def read_matrix(path):
    with open(path, "rb") as fh:
        return decode_matrix(fh.read())


def fnv1a64(data, h=FNV_OFFSET):
    """64-bit FNV-1a hash of ``data`` (bytes), optionally continuing from ``h``."""
    # the recurrence is sequential per byte, so this stays a plain loop
    for b in memoryview(data).cast("B"):
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def checksum(*chunks):
    h = FNV_OFFSET
    for chunk in chunks:
        if isinstance(chunk, str):
            chunk = chunk.encode()
        elif isinstance(chunk, np.ndarray):
            chunk = np.ascontiguousarray(chunk).tobytes()
        h = fnv1a64(chunk, h)
    return f"{h:016x}"


def digest(data):
    """Fast 64-bit integrity digest (BLAKE2b) of bytes or text, as 16 hex digits."""
    if isinstance(data, str):
        data = data.encode()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def file_checksum(path):
    with open(path, "rb") as fh:
        return digest(fh.read())


def write_manifest(path, entries):
    """Write ``entries`` (an ordered mapping) as ``key=value`` lines."""
    lines = []
    for key, value in entries.items():
        if "\n" in str(value) or "=" in str(key):
            raise ValueError(f"manifest entry {key!r} is not representable")
        lines.append(f"{key}={value}")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_manifest(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries
