"""Synthetic test images on a [0, 255] intensity scale."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PHANTOMS = ("shepp_like", "piecewise_blocks", "textured")


class UnknownPhantom(ValueError):
    pass


@dataclass
class Phantom:
    name: str
    image: np.ndarray
    seed: int = 0
    params: dict = field(default_factory=dict)


# modified Shepp-Logan: intensity, semi-axes (a, b), centre (x0, y0), angle (deg)
_SHEPP = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def _dims(dims) -> tuple[int, int]:
    if isinstance(dims, int):
        return dims, dims
    return int(dims[0]), int(dims[1])


def _shepp(height, width) -> np.ndarray:
    y = (np.arange(height) - (height - 1) / 2) / (height / 2)
    x = (np.arange(width) - (width - 1) / 2) / (width / 2)
    X, Y = np.meshgrid(x, -y)
    img = np.zeros((height, width))
    for value, a, b, x0, y0, deg in _SHEPP:
        th = np.deg2rad(deg)
        xr = (X - x0) * np.cos(th) + (Y - y0) * np.sin(th)
        yr = -(X - x0) * np.sin(th) + (Y - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0) * 255.0


def _blocks(height, width, rng, tiles: int = 8) -> np.ndarray:
    levels = np.linspace(0.0, 255.0, 6)
    values = rng.choice(levels, size=(tiles, tiles))
    ys = np.arange(height) * tiles // height
    xs = np.arange(width) * tiles // width
    return values[ys[:, None], xs[None, :]]


def _textured(height, width, rng) -> np.ndarray:
    base = _blocks(height, width, rng, tiles=4) * 0.6
    y, x = np.mgrid[0:height, 0:width]
    fx, fy = rng.uniform(2, 6, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    texture = 40.0 * np.sin(2 * np.pi * (fx * x / width + fy * y / height) + phase)
    return np.clip(base + texture + 60.0, 0.0, 255.0)


def make_phantom(name: str, dims, seed: int = 0, phase_ramp: float = 0.0) -> Phantom:
    """Build a deterministic complex phantom.

    ``phase_ramp`` (radians across the width) multiplies the magnitude image by
    a linear phase; the default keeps the image real.
    """
    height, width = _dims(dims)
    rng = np.random.default_rng(seed)
    if name == "shepp_like":
        mag = _shepp(height, width)
    elif name == "piecewise_blocks":
        mag = _blocks(height, width, rng)
    elif name == "textured":
        mag = _textured(height, width, rng)
    else:
        raise UnknownPhantom(f"unknown phantom {name!r}; choose from {', '.join(PHANTOMS)}")
    image = mag.astype(np.complex128)
    if phase_ramp:
        ramp = np.exp(1j * phase_ramp * np.arange(width) / width)
        image = image * ramp[None, :]
    return Phantom(name, image, seed, {"dims": (height, width), "phase_ramp": phase_ramp})
