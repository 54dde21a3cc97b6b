"""Periodic image grids: finite differences, box sums and the DFT.

Images are 2-D numpy arrays indexed ``[y, x]`` (row-major, ``height x width``).
Offsets are ``(dx, dy)`` pairs, ``dx`` moving along a row.  Every operator
uses circular (periodic) boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Offset = tuple[int, int]


class OffsetSet(tuple):
    """Ordered, duplicate-free collection of integer ``(dx, dy)`` offsets."""

    def __new__(cls, offsets: Iterable[Sequence[int]]):
        items = tuple((int(o[0]), int(o[1])) for o in offsets)
        if len(set(items)) != len(items):
            raise ValueError("duplicate offsets in OffsetSet")
        return super().__new__(cls, items)

    @classmethod
    def square(cls, radius: int, exclude_zero: bool = False) -> "OffsetSet":
        r = range(-radius, radius + 1)
        return cls(
            (dx, dy) for dy in r for dx in r if not (exclude_zero and dx == 0 and dy == 0)
        )

    def reflected(self) -> "OffsetSet":
        return OffsetSet((-dx, -dy) for dx, dy in self)

    def bounding_rect(self) -> tuple[int, int, int, int] | None:
        """Return ``(x0, x1, y0, y1)`` if the set is a full rectangle, else None."""
        if not self:
            return None
        xs = [o[0] for o in self]
        ys = [o[1] for o in self]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        if (x1 - x0 + 1) * (y1 - y0 + 1) != len(self):
            return None
        return x0, x1, y0, y1


@dataclass(frozen=True)
class PatchGeometry:
    """Patch offsets ``patch`` and search offsets ``neighborhood``."""

    patch: OffsetSet
    neighborhood: OffsetSet

    def __post_init__(self):
        object.__setattr__(self, "patch", OffsetSet(self.patch))
        object.__setattr__(self, "neighborhood", OffsetSet(self.neighborhood))
        if (0, 0) in self.neighborhood:
            raise ValueError("the search neighborhood must not contain the zero offset")
        if not self.patch or not self.neighborhood:
            raise ValueError("patch and neighborhood must be non-empty")

    @classmethod
    def square(cls, patch_radius: int = 1, search_radius: int = 1) -> "PatchGeometry":
        return cls(
            OffsetSet.square(patch_radius),
            OffsetSet.square(search_radius, exclude_zero=True),
        )

    @classmethod
    def local_tv(cls) -> "PatchGeometry":
        """Single-pixel patches compared with the right and lower neighbour."""
        return cls(OffsetSet([(0, 0)]), OffsetSet([(1, 0), (0, 1)]))

    @property
    def patch_count(self) -> int:
        return len(self.patch)


def as_image(f, dtype=np.complex128) -> np.ndarray:
    arr = np.asarray(f, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    return arr


def shift(f: np.ndarray, q: Offset) -> np.ndarray:
    """Return ``g`` with ``g(x) = f(x + q)`` (periodic). Works on stacks too."""
    dx, dy = q
    return np.roll(f, (-dy, -dx), axis=(-2, -1))


def shift_diff(f: np.ndarray, q: Offset) -> np.ndarray:
    """Forward difference ``f(x) - f(x + q)`` with wraparound."""
    return f - shift(f, q)


def shift_diff_adjoint(h: np.ndarray, q: Offset) -> np.ndarray:
    """Adjoint of :func:`shift_diff`: ``h(x) - h(x - q)``."""
    return h - shift(h, (-q[0], -q[1]))


def shift_diff_stack(f: np.ndarray, offsets: Sequence[Offset]) -> np.ndarray:
    """Differences for all offsets at once, shape ``(len(offsets), H, W)``."""
    return np.stack([shift_diff(f, q) for q in offsets])


def box_sum_filter(g: np.ndarray, patch: Sequence[Offset]) -> np.ndarray:
    """Unnormalized periodic box sum ``out(x) = sum_{p in patch} g(x - p)``.

    Acts on the last two axes so a stack of images is filtered in one call.
    Rectangular offset sets are done as two 1-D passes.
    """
    patch = OffsetSet(patch)
    rect = patch.bounding_rect()
    if rect is None:
        return _box_sum_direct(g, patch)
    x0, x1, y0, y1 = rect
    return _box_sum_axis(_box_sum_axis(g, x0, x1, -1), y0, y1, -2)


def _box_sum_axis(g: np.ndarray, lo: int, hi: int, axis: int) -> np.ndarray:
    """``out[i] = sum_{k=lo..hi} g[i - k]`` along ``axis`` with wraparound."""
    n = g.shape[axis]
    if hi - lo + 1 >= n or max(abs(lo), abs(hi)) >= n:
        out = np.zeros_like(g)
        for k in range(lo, hi + 1):
            out += np.roll(g, k, axis=axis)
        return out
    g = np.moveaxis(g, axis, -1)
    # padded[j] = g[(j - hi) mod n]; out[i] = sum_{k} padded[i + hi - k]
    padded = np.concatenate([g[..., n - hi:] if hi > 0 else g[..., :0], g,
                             g[..., :-lo] if lo < 0 else g[..., :0]], axis=-1)
    if hi < 0:
        padded = padded[..., -hi:]
    out = np.zeros_like(g)
    width = hi - lo + 1
    for k in range(width):
        start = width - 1 - k
        out += padded[..., start:start + n]
    return np.moveaxis(out, -1, axis)


def _box_sum_direct(g: np.ndarray, patch: Sequence[Offset]) -> np.ndarray:
    out = np.zeros_like(g)
    for dx, dy in patch:
        out += np.roll(g, (dy, dx), axis=(-2, -1))
    return out


def dft(f: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT, kernel ``exp(-2j*pi*<w, x>/dims)``."""
    return np.fft.fft2(f)


def idft(F: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft`; carries the ``1/(width*height)`` factor."""
    return np.fft.ifft2(F)


def frequency_grids(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency indices ``(wx, wy)`` broadcastable to ``shape``."""
    height, width = shape
    wy = np.arange(height)[:, None]
    wx = np.arange(width)[None, :]
    return wx, wy


def diff_multiplier(q: Offset, shape: tuple[int, int]) -> np.ndarray:
    """Fourier multiplier ``d_q`` with ``dft(shift_diff(f, q)) == d_q * dft(f)``."""
    height, width = shape
    wx, wy = frequency_grids(shape)
    phase = 2j * np.pi * (wx * q[0] / width + wy * q[1] / height)
    return 1.0 - np.exp(phase)


def diff_multiplier_power(q: Offset, shape: tuple[int, int]) -> np.ndarray:
    """``|d_q|^2`` evaluated as ``4 sin^2(pi <w, q/dims>)``."""
    height, width = shape
    wx, wy = frequency_grids(shape)
    return 4.0 * np.sin(np.pi * (wx * q[0] / width + wy * q[1] / height)) ** 2


def laplacian_symbol(neighborhood: Sequence[Offset], shape: tuple[int, int]) -> np.ndarray:
    """``sum_q |d_q|^2`` over a neighborhood."""
    out = np.zeros(shape)
    for q in neighborhood:
        out += diff_multiplier_power(q, shape)
    return out
