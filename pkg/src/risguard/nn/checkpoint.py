"""Named-tensor checkpoint codec.

Layout (little-endian): magic "RGCK" | version u16 | dtype code u8 (4 or 8)
| key count u16, then per key: name length u16, utf-8 name, ndim u8, dims u32...
and finally the payloads in key order. float64 is used on the FL transport
path so updates cross the boundary losslessly; float32 is the storage mode.
"""
import struct
from pathlib import Path

import numpy as np

from ..fileio import atomic_write, sha256_bytes

MAGIC = b"RGCK"
VERSION = 1
_DTYPES = {4: "<f4", 8: "<f8"}


class CheckpointError(ValueError):
    pass


def encode(params: dict, width: int = 4) -> bytes:
    if width not in _DTYPES:
        raise CheckpointError(f"unsupported float width {width}")
    head = [struct.pack("<4sHBH", MAGIC, VERSION, width, len(params))]
    body = []
    for name, arr in params.items():
        raw = name.encode()
        arr = np.asarray(arr)
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype=_DTYPES[width]).tobytes())
    return b"".join(head) + b"".join(body)


def decode(blob: bytes) -> dict:
    try:
        magic, version, width, count = struct.unpack_from("<4sHBH", blob)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if magic != MAGIC or version != VERSION or width not in _DTYPES:
        raise CheckpointError(f"bad checkpoint header {magic!r} v{version} w{width}")
    off = struct.calcsize("<4sHBH")
    specs = []
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + ln].decode()
            off += ln
            (ndim,) = struct.unpack_from("<B", blob, off)
            shape = struct.unpack_from(f"<{ndim}I", blob, off + 1)
            off += 1 + 4 * ndim
            specs.append((name, shape))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint key table") from exc
    out = {}
    for name, shape in specs:
        nbytes = int(np.prod(shape, dtype=np.int64)) * width
        if off + nbytes > len(blob):
            raise CheckpointError(f"truncated payload for '{name}'")
        out[name] = np.frombuffer(blob, dtype=_DTYPES[width], count=nbytes // width,
                                  offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return out


def save_checkpoint(params: dict, path, width: int = 4) -> Path:
    return atomic_write(path, encode(params, width))


def load_checkpoint(path) -> dict:
    return decode(Path(path).read_bytes())


def params_hash(params: dict, width: int = 8) -> str:
    return sha256_bytes(encode(params, width))
