"""Versioned binary checkpoint container.

Layout: magic ``PKGC``, u32 version, u64 JSON-header length, the JSON header
(config snapshot plus any small state), u32 tensor count, then per tensor:
u16 name length, utf-8 name, u8 dtype tag (0 = f32, 1 = f64), u8 ndim, u32
dims, raw little-endian payload.  Round-trips are bit-exact for both dtypes;
training state is written as f64 so save/resume is exactly reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"PKGC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict, dtype: str = "f8") -> None:
    """Write named tensors plus a JSON header; ``dtype`` picks f4 or f8 payloads."""
    np_dtype = np.dtype("<" + dtype)
    if np_dtype not in _TAGS:
        raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.asarray([VERSION], dtype="<u4").tobytes())
        fh.write(np.asarray([len(blob)], dtype="<u8").tobytes())
        fh.write(blob)
        fh.write(np.asarray([len(tensors)], dtype="<u4").tobytes())
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(arr, dtype=np_dtype)  # tobytes() emits C order; 0-d shapes survive
            fh.write(np.asarray([len(encoded)], dtype="<u2").tobytes())
            fh.write(encoded)
            fh.write(bytes([_TAGS[np_dtype], arr.ndim]))
            fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, dtype: str) -> int:
        return int(np.frombuffer(self.take(np.dtype(dtype).itemsize), dtype=dtype)[0])


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors and header back; f4 payloads are widened to float64."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u("<u4")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} not supported (expected {VERSION})")
    header = json.loads(r.take(r.u("<u8")).decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u("<u4")):
        name = r.take(r.u("<u2")).decode("utf-8")
        tag, ndim = r.take(1)[0], r.take(1)[0]
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for tensor {name!r}")
        shape = tuple(int(x) for x in np.frombuffer(r.take(4 * ndim), dtype="<u4"))
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(r.take(count * _DTYPES[tag].itemsize), dtype=_DTYPES[tag])
        tensors[name] = raw.astype(np.float64).reshape(shape)
    return tensors, header
