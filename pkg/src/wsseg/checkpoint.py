"""Versioned binary container of named float64 arrays.

Byte layout (all integers little-endian)::

    magic     8 bytes   b"WSSGCKPT"
    version   u32       currently 1
    cfg_len   u32       length of the UTF-8 config text that follows
    cfg       cfg_len bytes
    count     u32       number of arrays
    per array:
      name_len  u16, name (UTF-8)
      ndim      u8, then ndim x u32 dimensions
      data      product(dims) x float64 little-endian, row-major
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WSSGCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def dumps(arrays, config_text=""):
    cfg = config_text.encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(buf):
    """Return ``(arrays, config_text)``."""
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 8
    version, cfg_len = struct.unpack_from("<II", buf, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    cfg = buf[pos:pos + cfg_len].decode("utf-8")
    pos += cfg_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(buf, "<f8", size, pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError) as err:
        raise CheckpointError(f"truncated checkpoint: {err}") from None
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last array")
    return arrays, cfg


def save(path, arrays, config_text=""):
    """Atomic write: a failed save never clobbers the previous file."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(arrays, config_text))
    os.replace(tmp, path)


def load(path):
    return loads(Path(path).read_bytes())
