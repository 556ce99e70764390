"""Binary container of named little-endian f32 arrays.

Layout::

    b"NAF1"  u32 array_count
    per array: u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims
    then the raw f32 payloads in the same order

A text manifest listing names and shapes can be written next to it.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError

MAGIC = b"NAF1"


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_arrays(arrays))


def load_arrays(path) -> dict[str, np.ndarray]:
    return decode_arrays(Path(path).read_bytes(), str(path))


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    head = [MAGIC, struct.pack("<I", len(arrays))]
    body = []
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim))
        head.append(struct.pack(f"<{a.ndim}I", *a.shape))
        body.append(np.ascontiguousarray(a).tobytes())
    return b"".join(head + body)


def decode_arrays(buf: bytes, path: str = "<bytes>") -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ValidationError(f"{path}: not a named-array file")
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    specs = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        name = buf[off + 2:off + 2 + n].decode()
        off += 2 + n
        (ndim,) = struct.unpack_from("<B", buf, off)
        shape = struct.unpack_from(f"<{ndim}I", buf, off + 1)
        off += 1 + 4 * ndim
        specs.append((name, shape))
    out = {}
    for name, shape in specs:
        size = int(np.prod(shape))
        if off + 4 * size > len(buf):
            raise ValidationError(f"{path}: truncated payload for {name}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    return out


def manifest_text(arrays: Mapping[str, np.ndarray]) -> str:
    return "".join(f"{k}\t{'x'.join(map(str, np.shape(v)))}\n" for k, v in arrays.items())
