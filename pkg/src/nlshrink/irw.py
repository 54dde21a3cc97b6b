"""Iteratively reweighted non-local reconstruction (majorize-minimize).

Each outer step freezes patch weights ``w_q(x) = phi'(d) / (2 d)`` at the
current image and solves the weighted quadratic problem by CG.  It is the
slow comparator for :func:`nlshrink.solver.run_nls`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import penalties as pen
from .grid import PatchGeometry, box_sum_filter
from .operators import MeasurementModel, pcg
from .penalties import PenaltyKind, PenaltySpec
from .solver import (
    SolverTrace,
    TraceRecord,
    adjoint_diff_sum,
    diff_stack,
    patch_sq_norms,
    regularizer,
    snr_or_nan,
)


@dataclass(frozen=True)
class IrwConfig:
    lam: float
    penalty: PenaltySpec
    geometry: PatchGeometry = field(default_factory=PatchGeometry.square)
    outer_iters: int = 30
    cg_iters: int = 40
    cg_tol: float = 1e-8
    weight_floor: float = 1e-2
    T_init: float | None = None
    T_decfactor: float = 1.0
    T_min: float | None = None
    sigma_decfactor: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.outer_iters < 1 or self.cg_iters < 1:
            raise ValueError("iteration counts must be positive")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be non-negative")
        if not 0 < self.T_decfactor <= 1 or not 0 < self.sigma_decfactor <= 1:
            raise ValueError("decay factors must lie in (0, 1]")

    def schedule(self):
        spec = self.penalty if self.T_init is None else self.penalty.with_params(T=self.T_init)
        T, sigma = spec.T, spec.sigma
        floor = self.T_min if self.T_min is not None else spec.T / 20.0
        for outer in range(self.outer_iters):
            yield outer, spec.with_params(T=T, sigma=sigma)
            T = max(T * self.T_decfactor, floor)
            sigma *= self.sigma_decfactor


def weight_from_distance(d: np.ndarray, penalty: PenaltySpec, floor: float = 0.0) -> np.ndarray:
    """``phi'(d) / (2 d)`` with the ``d -> 0`` limit handled per metric.

    h1 has the finite limit ``1 / (2 sigma^2)`` and is evaluated in closed
    form.  The other metrics diverge at 0, so ``d`` is clamped to ``floor``
    first; a zero floor then yields ``inf`` at coincident patches.
    """
    d = np.asarray(d, dtype=np.float64)
    if penalty.kind is PenaltyKind.H1:
        s2 = penalty.sigma**2
        return np.exp(-(d**2) / (2 * s2)) / (2 * s2)
    dc = np.maximum(d, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = pen.dphi(dc, penalty) / (2.0 * dc)
    w = np.where(dc > 0, w, np.inf)
    if penalty.kind.is_thresholded:
        w = np.where(d >= penalty.T, 0.0, w)
    return w


def irw_weights(f: np.ndarray, geometry: PatchGeometry, penalty: PenaltySpec, weight_floor: float = 0.0) -> np.ndarray:
    """Weights ``w_q(x)`` stacked along the neighborhood order."""
    d = np.sqrt(patch_sq_norms(np.asarray(f, dtype=np.complex128), geometry))
    return weight_from_distance(d, penalty, weight_floor)


def irw_weights_bruteforce(f, geometry: PatchGeometry, penalty: PenaltySpec, weight_floor: float = 0.0):
    from .solver import extract_patches

    f = np.asarray(f, dtype=np.complex128)
    height, width = f.shape
    P = extract_patches(f, geometry.patch)
    yy, xx = np.indices(f.shape)
    out = []
    for dx, dy in geometry.neighborhood:
        d = np.sqrt(np.sum(np.abs(P - P[(yy + dy) % height, (xx + dx) % width]) ** 2, axis=-1))
        out.append(weight_from_distance(d, penalty, weight_floor))
    return np.stack(out)


def weighted_quadratic(f, model, weights, lam, geometry: PatchGeometry) -> float:
    """``||Af - b||^2 + lam * sum_x sum_q w_q(x) ||P_x f - P_{x+q} f||^2``."""
    sq = patch_sq_norms(np.asarray(f, dtype=np.complex128), geometry)
    return model.data_misfit(f) + lam * float(np.sum(weights * sq))


def irw_step(
    f_n: np.ndarray,
    model,
    weights: np.ndarray,
    lam: float,
    geometry: PatchGeometry,
    cg_iters: int = 40,
    cg_tol: float = 1e-8,
    callback=None,
) -> np.ndarray:
    """Minimize the reweighted quadratic by plain CG warm-started at ``f_n``.

    The patch sum folds into pixel weights ``W_q = box(w_q)``, so the normal
    operator is ``A^H A + lam * sum_q D_q^H W_q D_q``.
    """
    if not np.all(np.isfinite(weights)):
        raise ValueError("IRW weights are not finite; raise weight_floor")
    offsets = tuple(geometry.neighborhood)
    W = box_sum_filter(weights, geometry.patch)
    op = model.operator()

    def apply(x):
        return op.normal(x) + lam * adjoint_diff_sum(W * diff_stack(x, offsets), offsets)

    rhs = op.adjoint(model.operator_data())
    x, _ = pcg(apply, rhs, f_n, None, cg_iters, cg_tol, callback)
    return x


def true_cost(f, model, penalty: PenaltySpec, lam: float, geometry: PatchGeometry) -> float:
    norms = np.sqrt(patch_sq_norms(f, geometry))
    return model.data_misfit(f) + lam * regularizer(norms, penalty, False, None)


def run_irw(model, config: IrwConfig, ground_truth: np.ndarray | None = None):
    """Alternate weight estimation and reweighted solves; returns ``(f, trace)``.

    Trace rows share the NLS schema; ``beta`` is NaN and both cost columns
    hold the true cost.  Row ``outer = k`` is the image after ``k`` steps.
    """
    f = np.asarray(model.zero_filled(), dtype=np.complex128)
    model.check_grid(f.shape)
    trace = SolverTrace()
    start = time.perf_counter()
    schedule = list(config.schedule())

    def record(outer, spec):
        c = true_cost(f, model, spec, config.lam, config.geometry)
        trace.append(
            TraceRecord(outer, 0, math.nan, spec.T, c, c, time.perf_counter() - start,
                        snr_or_nan(f, ground_truth))
        )

    record(0, schedule[0][1])
    for outer, spec in schedule:
        w = irw_weights(f, config.geometry, spec, config.weight_floor)
        f = irw_step(f, model, w, config.lam, config.geometry, config.cg_iters, config.cg_tol)
        record(outer + 1, spec)
    return f, trace
