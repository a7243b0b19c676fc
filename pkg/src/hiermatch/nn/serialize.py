"""Binary parameter files.

Layout (all integers little-endian u32)::

    b"HDMN" | version | repeated { name_len | name (utf-8) | ndim | dims... | float64 LE values }

Tensors follow each other until end of file.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from ..errors import MalformedFile

MAGIC = b"HDMN"
VERSION = 1


def save_params(params: Dict[str, np.ndarray], path) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> Dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise MalformedFile(f"{path}: bad magic at byte 0")
    if len(buf) < 8:
        raise MalformedFile(f"{path}: truncated header at byte {len(buf)}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise MalformedFile(f"{path}: unsupported format version {version} at byte 4")
    pos = 8
    out: Dict[str, np.ndarray] = {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise MalformedFile(f"{path}: truncated record at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        start = pos
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFile(f"{path}: undecodable tensor name at byte {start + 4}") from exc
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        if name in out:
            raise MalformedFile(f"{path}: duplicate tensor {name!r} at byte {start}")
        out[name] = values.reshape(shape)
    return out
