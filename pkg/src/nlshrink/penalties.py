"""Robust patch-distance metrics and their shrinkage rules.

Each metric ``phi`` acts on a patch-difference norm ``t >= 0``.  For a
half-quadratic weight ``beta`` the shrinkage factor is

    nu(t) = (1 - phi'(t) / (beta * t))_+

with a dead zone ``[0, L]`` on which ``nu`` vanishes.  ``phi_hat`` is the
Huber-like surrogate that the alternating scheme actually minimizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import erf

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


class DomainError(ValueError):
    pass


class PenaltyKind(str, Enum):
    LP_THRESHOLDED = "lp_thresholded"
    LP = "lp"
    L1_THRESHOLDED = "l1_thresholded"
    L1 = "l1"
    H1 = "h1"
    PEYRE = "peyre"
    NLTV = "nltv"

    @property
    def is_power(self) -> bool:
        return self in _POWER_KINDS

    @property
    def is_thresholded(self) -> bool:
        return self in (PenaltyKind.LP_THRESHOLDED, PenaltyKind.L1_THRESHOLDED)

    @property
    def uses_sigma(self) -> bool:
        return self in (PenaltyKind.H1, PenaltyKind.PEYRE, PenaltyKind.NLTV)


_POWER_KINDS = frozenset(
    {PenaltyKind.LP_THRESHOLDED, PenaltyKind.LP, PenaltyKind.L1_THRESHOLDED, PenaltyKind.L1}
)

_ALIASES = {
    "lp-t": PenaltyKind.LP_THRESHOLDED,
    "lpt": PenaltyKind.LP_THRESHOLDED,
    "l1-t": PenaltyKind.L1_THRESHOLDED,
    "l1t": PenaltyKind.L1_THRESHOLDED,
}


def parse_kind(name: str | PenaltyKind) -> PenaltyKind:
    if isinstance(name, PenaltyKind):
        return name
    key = name.strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    try:
        return PenaltyKind(key)
    except ValueError:
        choices = ", ".join(k.value for k in PenaltyKind)
        raise ValueError(f"unknown penalty kind {name!r}; choose from {choices}") from None


@dataclass(frozen=True)
class PenaltySpec:
    """A distance metric and its parameters.

    ``p`` is only read by the power kinds (forced to 1 for the l1 kinds),
    ``T`` by the thresholded kinds and ``sigma`` by h1/peyre/nltv.
    """

    kind: PenaltyKind
    p: float = 0.5
    T: float = 1.0
    sigma: float = 0.5

    def __post_init__(self):
        kind = parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (PenaltyKind.L1, PenaltyKind.L1_THRESHOLDED):
            object.__setattr__(self, "p", 1.0)
        if kind.is_power and not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if kind.is_thresholded and not self.T > 0:
            raise ValueError(f"threshold T must be positive, got {self.T}")
        if kind.uses_sigma and not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def threshold(self) -> float:
        return self.T if self.kind.is_thresholded else math.inf

    def with_params(self, **changes) -> "PenaltySpec":
        return replace(self, **changes)

    def describe(self) -> str:
        k = self.kind
        if k.is_thresholded:
            return f"{k.value}(p={self.p:g},T={self.T:g})"
        if k.is_power:
            return f"{k.value}(p={self.p:g})"
        return f"{k.value}(sigma={self.sigma:g})"


def _check_t(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("penalty argument must be non-negative")
    return arr


def _check_beta(beta: float) -> None:
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def phi(t, spec: PenaltySpec):
    """Metric value ``phi(t)``; vectorized over ``t``."""
    arr = _check_t(t)
    k = spec.kind
    if k.is_power:
        p, T = spec.p, spec.threshold
        val = np.where(arr < T, arr**p / p, (T**p / p) if math.isfinite(T) else 0.0)
    elif k is PenaltyKind.H1:
        val = -np.expm1(-(arr**2) / (2 * spec.sigma**2))
    elif k is PenaltyKind.PEYRE:
        val = -np.expm1(-arr / spec.sigma)
    else:
        val = erf(arr / spec.sigma)
    return _out(np.asarray(val, dtype=np.float64), t)


def dphi(t, spec: PenaltySpec):
    """Derivative ``phi'(t)`` (right derivative at 0; ``inf`` there for p < 1)."""
    arr = _check_t(t)
    k = spec.kind
    if k.is_power:
        p, T = spec.p, spec.threshold
        with np.errstate(divide="ignore"):
            val = np.where(arr < T, arr ** (p - 1.0), 0.0)
    elif k is PenaltyKind.H1:
        s2 = spec.sigma**2
        val = arr / s2 * np.exp(-(arr**2) / (2 * s2))
    elif k is PenaltyKind.PEYRE:
        val = np.exp(-arr / spec.sigma) / spec.sigma
    else:
        val = _TWO_OVER_SQRT_PI / spec.sigma * np.exp(-(arr**2) / spec.sigma**2)
    return _out(np.asarray(val, dtype=np.float64), t)


def nu(t, spec: PenaltySpec, beta: float):
    """Shrinkage factor in ``[0, 1]``; ``nu(0) = 0`` for every kind."""
    arr = _check_t(t)
    _check_beta(beta)
    k = spec.kind
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if k.is_power:
            p, T = spec.p, spec.threshold
            knee = beta ** (1.0 / (p - 2.0))
            val = np.where(
                arr >= T,
                1.0,
                np.where(arr >= knee, 1.0 - arr ** (p - 2.0) / beta, 0.0),
            )
        elif k is PenaltyKind.H1:
            g = np.exp(-(arr**2) / (2 * spec.sigma**2))
            bs2 = beta * spec.sigma**2
            val = np.where(g > bs2, 0.0, 1.0 - g / bs2)
        else:
            if k is PenaltyKind.PEYRE:
                g = np.exp(-arr / spec.sigma)
            else:
                g = _TWO_OVER_SQRT_PI * np.exp(-(arr**2) / spec.sigma**2)
            bst = beta * spec.sigma * arr
            val = np.where(g > bst, 0.0, 1.0 - g / bst)
        val = np.where(arr > 0, val, 0.0)
    val = np.clip(val, 0.0, 1.0)
    return _out(val, t)


def _switch_gap(t: float, spec: PenaltySpec, beta: float) -> float:
    """Positive inside the dead zone of the peyre/nltv rules, negative outside."""
    if spec.kind is PenaltyKind.PEYRE:
        g = math.exp(-t / spec.sigma)
    else:
        g = _TWO_OVER_SQRT_PI * math.exp(-(t**2) / spec.sigma**2)
    return g - beta * spec.sigma * t


def dead_zone_radius(spec: PenaltySpec, beta: float) -> float:
    """Largest ``t`` with ``nu(t) == 0``."""
    _check_beta(beta)
    k = spec.kind
    if k.is_power:
        return min(beta ** (1.0 / (spec.p - 2.0)), spec.threshold)
    if k is PenaltyKind.H1:
        bs2 = beta * spec.sigma**2
        if bs2 >= 1.0:
            return 0.0
        return spec.sigma * math.sqrt(2.0 * math.log(1.0 / bs2))
    lo, hi = 1e-12, 1e6
    if _switch_gap(lo, spec, beta) <= 0:
        return 0.0
    # the gap is strictly decreasing in t, so the bracket holds a single root
    while hi - lo > 1e-12 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if _switch_gap(mid, spec, beta) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def huber_offset(spec: PenaltySpec, beta: float) -> tuple[float, float]:
    """Return ``(L, c)`` with ``c = beta L^2 / 2 - phi(L)``."""
    L = dead_zone_radius(spec, beta)
    return L, beta * L * L / 2.0 - phi(L, spec)


def phi_hat(t, spec: PenaltySpec, beta: float):
    """Huber-like surrogate: quadratic on ``[0, L)``, equal to ``phi`` beyond."""
    arr = _check_t(t)
    _check_beta(beta)
    L, c = huber_offset(spec, beta)
    val = np.where(arr < L, beta * arr**2 / 2.0 - c, phi(arr, spec))
    return _out(np.asarray(val, dtype=np.float64), t)


def phi_and_hat_sums(t: np.ndarray, spec: PenaltySpec, beta: float) -> tuple[float, float]:
    """``(sum phi(t), sum phi_hat(t))`` sharing one evaluation of ``phi``."""
    arr = np.asarray(t, dtype=np.float64)
    raw = phi(arr, spec)
    L, c = huber_offset(spec, beta)
    inside = arr < L
    if not inside.any():
        total = float(raw.sum())
        return total, total
    ti = arr[inside]
    correction = float(np.sum(beta * ti**2 / 2.0 - c - raw[inside]))
    total = float(raw.sum())
    return total, total + correction


def shrink(t, spec: PenaltySpec, beta: float):
    """One-dimensional shrinkage ``t * nu(|t|)``."""
    arr = np.asarray(t, dtype=np.float64)
    return arr * nu(np.abs(arr), spec, beta)


TABLE_DEFAULTS = dict(p=0.5, T=1.0, sigma=0.5)
TABLE_BETA = 2.0
