"""Binary matrix blobs: little-endian float32, row-major, 16-byte header.

Header layout: magic b"AWEF", version u32, rows u32, cols u32.
"""

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError

MAGIC = b"AWEF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_blob(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError(f"blob matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]))
        f.write(m.tobytes())


def read_blob(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read blob {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"blob {path}: file shorter than header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"blob {path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"blob {path}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise IntegrityError(
            f"blob {path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, cols).copy()


def blob_checksum(path) -> int:
    """CRC32 of the full blob file, for manifest integrity checks."""
    return zlib.crc32(Path(path).read_bytes()) & 0xFFFFFFFF
