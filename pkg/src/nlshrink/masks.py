"""k-space sampling masks.

Masks use the unshifted DFT layout: DC is at index ``[0, 0]``.  Every
generator keeps DC.  Use ``np.fft.fftshift`` for display.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MASK_KINDS = ("random", "cartesian_lines", "radial_gridded", "full")
_KIND_ALIASES = {"cartesian": "cartesian_lines", "radial": "radial_gridded"}


class BadParams(ValueError):
    pass


@dataclass
class SamplingMask:
    keep: np.ndarray
    kind: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.keep.shape[0]

    @property
    def width(self) -> int:
        return self.keep.shape[1]

    @property
    def fraction(self) -> float:
        return float(self.keep.mean())

    @property
    def acceleration(self) -> float:
        return self.keep.size / max(int(self.keep.sum()), 1)


def _dims(dims) -> tuple[int, int]:
    if isinstance(dims, int):
        return dims, dims
    height, width = dims
    return int(height), int(width)


def _centered(n: int) -> np.ndarray:
    """Signed frequency of each unshifted index: 0, 1, ..., -1."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(int)


def gen_mask(kind: str, dims, params: dict | None = None, seed: int = 0) -> SamplingMask:
    """Generate a deterministic sampling mask.

    ``random`` takes ``fraction`` (or ``R``); ``cartesian_lines`` takes ``R``
    and keeps whole rows; ``radial_gridded`` takes ``spokes`` (and an optional
    ``angle`` offset in radians); ``full`` keeps everything.
    """
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in MASK_KINDS:
        raise BadParams(f"unknown mask kind {kind!r}")
    params = dict(params or {})
    height, width = _dims(dims)
    if height < 1 or width < 1:
        raise BadParams("mask dimensions must be positive")
    rng = np.random.default_rng(seed)
    if kind == "random":
        keep = _random(height, width, params, rng)
    elif kind == "cartesian_lines":
        keep = _cartesian(height, width, params, rng)
    elif kind == "radial_gridded":
        keep = _radial(height, width, params)
    else:
        keep = np.ones((height, width), dtype=bool)
    return SamplingMask(keep, kind, seed, params)


def _random(height, width, params, rng) -> np.ndarray:
    if "fraction" in params:
        fraction = float(params["fraction"])
    elif "R" in params:
        R = float(params["R"])
        if R < 1:
            raise BadParams("acceleration R must be at least 1")
        fraction = 1.0 / R
    else:
        raise BadParams("random masks need 'fraction' or 'R'")
    if not 0 < fraction <= 1:
        raise BadParams("fraction must lie in (0, 1]")
    total = height * width
    count = max(1, int(round(fraction * total)))
    # DC at flat index 0 is forced; draw the rest uniformly from the others
    others = rng.choice(np.arange(1, total), size=count - 1, replace=False)
    keep = np.zeros(total, dtype=bool)
    keep[0] = True
    keep[others] = True
    return keep.reshape(height, width)


def _cartesian(height, width, params, rng) -> np.ndarray:
    R = float(params.get("R", 0))
    if R < 1:
        raise BadParams("cartesian masks need acceleration R >= 1")
    rows_kept = max(1, int(round(height / R)))
    band = min(max(4, height // 32), rows_kept)
    freqs = _centered(height)
    # fully sampled band of low frequencies around DC
    order = np.argsort(np.abs(freqs) + 0.5 * (freqs < 0), kind="stable")
    chosen = set(order[:band].tolist())
    chosen.add(0)
    rest = np.array([r for r in range(height) if r not in chosen])
    extra = rows_kept - len(chosen)
    if extra > 0:
        chosen.update(rng.choice(rest, size=extra, replace=False).tolist())
    keep = np.zeros((height, width), dtype=bool)
    keep[sorted(chosen), :] = True
    return keep


def _radial(height, width, params) -> np.ndarray:
    spokes = int(params.get("spokes", 0))
    if spokes < 1:
        raise BadParams("radial masks need spokes >= 1")
    angle0 = float(params.get("angle", 0.0))
    half_diag = 0.5 * math.hypot(height, width)
    t = np.arange(-math.ceil(half_diag), math.ceil(half_diag) + 0.25, 0.25)
    kx_min, kx_max = -(width // 2), width - width // 2 - 1
    ky_min, ky_max = -(height // 2), height - height // 2 - 1
    keep = np.zeros((height, width), dtype=bool)
    for k in range(spokes):
        theta = angle0 + math.pi * k / spokes
        kx = np.rint(t * math.cos(theta)).astype(int)
        ky = np.rint(t * math.sin(theta)).astype(int)
        inside = (kx >= kx_min) & (kx <= kx_max) & (ky >= ky_min) & (ky <= ky_max)
        keep[ky[inside] % height, kx[inside] % width] = True
    keep[0, 0] = True
    return keep
