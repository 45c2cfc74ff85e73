"""Checkpoint container: named arrays in a flat binary file, magic "EV2C".

Layout (little-endian): magic 4 bytes, version u16, record count u32; per
record: name length u16 + UTF-8 name, dtype code u8, ndim u8, ndim x u32
dims, then the raw array bytes. Reload is bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EV2C"
VERSION = 1
_HEAD = struct.Struct("<4sHI")
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "<u4"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(arrays: dict, path) -> None:
    """Write a name -> ndarray mapping; keys are saved in insertion order."""
    f = open(path, "wb") if not hasattr(path, "write") else path
    close = f is not path
    try:
        f.write(_HEAD.pack(MAGIC, VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            code = _CODES.get(arr.dtype.newbyteorder("<"))
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    finally:
        if close:
            f.close()


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> ndarray mapping."""
    f = open(path, "rb") if not hasattr(path, "read") else path
    close = f is not path
    try:
        head = f.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise CheckpointError("truncated checkpoint header")
        magic, version, count = _HEAD.unpack(head)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        out: dict = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            if code not in _DTYPES:
                raise CheckpointError(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dtype = np.dtype(_DTYPES[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            raw = f.read(nbytes)
            if len(raw) < nbytes:
                raise CheckpointError(f"truncated record {name!r}")
            out[name] = np.frombuffer(raw, dtype).reshape(shape).copy()
        return out
    finally:
        if close:
            f.close()
