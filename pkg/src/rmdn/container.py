"""Binary tensor container.

Little-endian layout::

    magic   b"RMDN"
    version u16 (= 1)
    count   u32
    record* name_len u16, name (UTF-8), dtype u8, ndim u8,
            dims u64[ndim], row-major payload

dtype codes: 0 = float64, 1 = float32, 2 = int64.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"RMDN"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("int64"): 2}


def _code_for(arr: np.ndarray) -> int:
    dt = arr.dtype
    if dt in _CODES:
        return _CODES[dt]
    if dt.kind in "iub":
        return 2
    if dt.kind == "f":
        return 0
    raise TypeError(f"unsupported dtype {dt}")


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(tensors)))
    for name, value in tensors.items():
        if not name.isascii():
            raise ValueError(f"tensor name must be ASCII: {name!r}")
        raw_name = name.encode("utf-8")
        arr = np.asarray(value)
        code = _code_for(arr)
        arr = np.asarray(arr, dtype=_DTYPES[code], order="C")  # ascontiguousarray would promote 0-d to 1-d
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated file while reading {what}", pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic", 0)
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("name is not valid UTF-8", start + 2) from exc
        if name in out:
            raise FormatError(f"duplicate record {name!r}", start)
        code, ndim = struct.unpack("<BB", take(2, "dtype"))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}", pos - 2)
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim, "dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.uint64)) * dt.itemsize
        payload = take(nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", pos)
    return out


def write_container(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def read_container(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
