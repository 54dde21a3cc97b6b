"""Raw CIMG files and PNG import/export.

CIMG layout (little-endian): ``b"CIMG"``, u32 width, u32 height, u32 flags
(bit 0 set for complex data), then float64 samples in row-major order,
interleaved ``re, im`` when complex.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"CIMG"
_HEADER = struct.Struct("<4sIII")
FLAG_COMPLEX = 1


class ImageFormatError(ValueError):
    pass


def write_cimg(path, image: np.ndarray, complex_data: bool | None = None) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("CIMG holds 2-D images only")
    if complex_data is None:
        complex_data = np.iscomplexobj(image)
    height, width = image.shape
    flags = FLAG_COMPLEX if complex_data else 0
    if complex_data:
        payload = np.ascontiguousarray(image, dtype="<c16").view("<f8")
    else:
        if np.iscomplexobj(image):
            image = image.real
        payload = np.ascontiguousarray(image, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, width, height, flags))
        fh.write(payload.tobytes())


def read_cimg(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ImageFormatError(f"{path}: truncated header")
    magic, width, height, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ImageFormatError(f"{path}: bad magic {magic!r}")
    is_complex = bool(flags & FLAG_COMPLEX)
    count = width * height * (2 if is_complex else 1)
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise ImageFormatError(f"{path}: expected {8 * count} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if is_complex:
        return (values[0::2] + 1j * values[1::2]).reshape(height, width)
    return values.reshape(height, width).astype(np.complex128)


def read_png(path) -> np.ndarray:
    """Read an 8/16-bit grayscale PNG as a complex image (zero imaginary part)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "I", "I;16", "I;16B", "I;16L"):
            im = im.convert("L")
        data = np.array(im, dtype=np.float64)
    return data.astype(np.complex128)


def write_magnitude_png(path, image: np.ndarray, max_intensity: float = 255.0) -> None:
    """Save ``|image|`` as 8-bit PNG, scaled so ``max_intensity`` maps to 255."""
    if max_intensity <= 0:
        raise ValueError("max_intensity must be positive")
    mag = np.abs(np.asarray(image)) / max_intensity
    pixels = np.clip(np.rint(mag * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)


def read_image(path) -> np.ndarray:
    """Load CIMG or PNG, dispatching on the file contents."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:4] == MAGIC:
        return read_cimg(path)
    if head.startswith(b"\x89PNG"):
        return read_png(path)
    raise ImageFormatError(f"{path}: neither CIMG nor PNG")
