"""Self-describing tensor container files.

Layout: one UTF-8 JSON header line terminated by a newline, then the
raw little-endian float32 payload in row-major order.  The header
carries magic, dtype, order, byte order, shape, and a free-form meta
object.  Reads reject anything that does not match byte for byte what
a write would produce for the same tensor.
"""

from __future__ import annotations

import json
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = "IRGT1"
_HEADER_LIMIT = 1 << 20


def write_tensor_stream(f: BinaryIO, array: np.ndarray, meta: dict | None = None):
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = {
        "magic": MAGIC,
        "dtype": "f32",
        "order": "row-major",
        "byteOrder": "LE",
        "shape": list(arr.shape),
        "meta": meta or {},
    }
    f.write(json.dumps(header).encode("utf-8") + b"\n")
    f.write(arr.tobytes())


def _read_header_line(f: BinaryIO) -> bytes:
    line = bytearray()
    while True:
        byte = f.read(1)
        if not byte:
            raise FormatError("truncated container: header line has no newline")
        if byte == b"\n":
            return bytes(line)
        line += byte
        if len(line) > _HEADER_LIMIT:
            raise FormatError("header line exceeds 1 MiB")


def read_tensor_stream(f: BinaryIO) -> tuple[np.ndarray, dict]:
    raw = _read_header_line(f)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed container header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("container header is not an object")
    if header.get("magic") != MAGIC:
        raise FormatError(f"bad magic {header.get('magic')!r}, expected {MAGIC!r}")
    for key, expect in (("dtype", "f32"), ("order", "row-major"), ("byteOrder", "LE")):
        if header.get(key) != expect:
            raise FormatError(f"unsupported {key} {header.get(key)!r}")
    shape = header.get("shape")
    if (not isinstance(shape, list)
            or not all(isinstance(d, int) and d >= 0 for d in shape)):
        raise FormatError(f"malformed shape {shape!r}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(
            f"payload holds {len(payload)} bytes, header promises {4 * count}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    meta = header.get("meta")
    if meta is None:
        meta = {}
    if not isinstance(meta, dict):
        raise FormatError("container meta is not an object")
    return data, meta


def write_tensor(path, array: np.ndarray, meta: dict | None = None):
    """Write one tensor to path; roundtrips bit-exactly through read_tensor."""
    with open(path, "wb") as f:
        write_tensor_stream(f, array, meta)


def read_tensor(path) -> tuple[np.ndarray, dict]:
    """Read one tensor; errors if trailing bytes follow the payload."""
    with open(path, "rb") as f:
        data, meta = read_tensor_stream(f)
        if f.read(1):
            raise FormatError("trailing bytes after tensor payload")
    return data, meta
