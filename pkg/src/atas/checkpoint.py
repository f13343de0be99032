"""Binary checkpoint format (little-endian).

    magic    b"ATAS"
    version  u32
    config   u32 byte length, then UTF-8 ``key=value`` lines
    count    u32 number of tensors
    tensor   u32 name length, name bytes, u32 rank, rank x u32 dims, raw f64 data

Tensor order is preserved; round trips are bit-exact.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"ATAS"
FORMAT_VERSION = 1


def _u32(value):
    return struct.pack("<I", value)


def encode_config(config: dict) -> bytes:
    lines = []
    for key, value in config.items():
        text = str(value)
        if "\n" in text or "=" in str(key):
            raise CheckpointError(f"config entry {key!r} cannot be stored")
        lines.append(f"{key}={text}")
    return "\n".join(lines).encode("utf-8")


def decode_config(blob: bytes) -> dict:
    out = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            out[key] = value
    return out


def dumps(config: dict, tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(FORMAT_VERSION))
    blob = encode_config(config)
    buf.write(_u32(len(blob)))
    buf.write(blob)
    buf.write(_u32(len(tensors)))
    for name, array in tensors.items():
        array = np.asarray(array, dtype=np.float64)
        raw = name.encode("utf-8")
        buf.write(_u32(len(raw)))
        buf.write(raw)
        buf.write(_u32(array.ndim))
        for dim in array.shape:
            buf.write(_u32(dim))
        buf.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(blob: bytes):
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not an ATAS checkpoint (bad magic)")
    version = u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = decode_config(bytes(take(u32())))
    tensors = {}
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(bytes(take(8 * count)), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last tensor")
    return config, tensors


def save(path, config: dict, tensors: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(config, tensors))
    os.replace(tmp, path)


def load(path):
    try:
        with open(path, "rb") as fh:
            return loads(fh.read())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
