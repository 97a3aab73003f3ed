"""Binary netpbm I/O: P6 color images and P5 grayscale label maps.

Images are written with maxval 255, one byte per sample.  Label maps use
the byte value as the class id directly, so save/load round-trips are
lossless.  Float images in [0, 1] are quantized once on save; loading
returns the stored bytes unchanged.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["NetpbmError", "save_ppm", "load_ppm", "save_pgm", "load_pgm",
           "image_to_unit", "unit_to_bytes"]


class NetpbmError(ValueError):
    pass


def unit_to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8 (round half away handled
    by rint's half-to-even; stable for round-tripping)."""
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def image_to_unit(raw: np.ndarray) -> np.ndarray:
    """uint8 samples -> float32 in [0, 1]."""
    return np.asarray(raw, dtype=np.float32) / np.float32(255.0)


def _write(path, magic: bytes, arr: np.ndarray) -> None:
    h, w = arr.shape[0], arr.shape[1]
    header = magic + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def save_ppm(path, image: np.ndarray) -> None:
    """Write a color image: uint8 passes through, floats are quantized."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise NetpbmError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = unit_to_bytes(arr)
    _write(path, b"P6", arr)


def save_pgm(path, labels: np.ndarray) -> None:
    """Write a label map, one byte per pixel = class id."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise NetpbmError(f"expected HxW label map, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise NetpbmError("label ids must fit in a byte")
        arr = arr.astype(np.uint8)
    _write(path, b"P5", arr)


def _parse_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Returns (magic, width, height, maxval, payload offset)."""
    if len(data) < 2:
        raise NetpbmError(f"{path}: not a netpbm file")
    magic = data[:2]
    pos = 2
    fields: list[int] = []
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise NetpbmError(f"{path}: malformed header near byte {start}")
        fields.append(int(token))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise NetpbmError(f"{path}: malformed header")
    pos += 1  # single whitespace byte separates header from payload
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise NetpbmError(f"{path}: bad dimensions {w}x{h}")
    if not 0 < maxval < 256:
        raise NetpbmError(f"{path}: unsupported maxval {maxval}")
    return magic, w, h, maxval, pos


def _load(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    got, w, h, _, off = _parse_header(data, path)
    if got != magic:
        raise NetpbmError(
            f"{path}: expected magic {magic.decode()}, found {got!r}"
        )
    need = w * h * channels
    payload = data[off : off + need]
    if len(payload) < need:
        raise NetpbmError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape).copy()


def load_ppm(path) -> np.ndarray:
    """Read a P6 image as uint8 HxWx3."""
    return _load(path, b"P6", 3)


def load_pgm(path) -> np.ndarray:
    """Read a P5 label map as uint8 HxW."""
    return _load(path, b"P5", 1)
