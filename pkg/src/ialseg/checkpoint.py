"""Flat binary checkpoint format for named float tensors.

Layout: the magic bytes ``IALSEG01`` followed by one record per tensor,
in insertion order:

    u32 LE   name byte length
    bytes    name, utf-8
    u8       dtype tag (1 = float32, 2 = float64)
    u8       rank
    u32 LE   size of each dimension
    bytes    payload, little-endian, C order

Writing the same tensors twice produces identical bytes, so checkpoint
determinism can be asserted bitwise.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "CheckpointError", "save_checkpoint", "load_checkpoint",
           "save_params", "load_params_into"]

MAGIC = b"IALSEG01"

_WIRE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_NATIVE = {1: np.float32, 2: np.float64}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr)
            if a.dtype == np.float32:
                tag = 1
            elif a.dtype == np.float64:
                tag = 2
            else:
                raise CheckpointError(f"unsupported dtype {a.dtype} for tensor {name!r}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", tag, a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.astype(_WIRE[tag], copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: missing checkpoint magic")
    out: dict[str, np.ndarray] = {}
    off = len(MAGIC)
    total = len(data)
    while off < total:
        if off + 4 > total:
            raise CheckpointError(f"{path}: truncated record header")
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + nlen + 2 > total:
            raise CheckpointError(f"{path}: truncated record header")
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", data, off)
        off += 2
        if tag not in _WIRE:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        if off + 4 * rank > total:
            raise CheckpointError(f"{path}: truncated shape for {name!r}")
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        wire = _WIRE[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = count * wire.itemsize
        if off + nbytes > total:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(data, dtype=wire, count=count, offset=off)
        off += nbytes
        if name in out:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        out[name] = arr.astype(_NATIVE[tag]).reshape(shape)
    return out


def save_params(path, store) -> None:
    """Checkpoint every parameter of a ParamStore."""
    save_checkpoint(path, store.state_dict())


def load_params_into(store, path) -> None:
    """Restore a ParamStore from a checkpoint, names and shapes checked."""
    store.load_state_dict(load_checkpoint(path))
