"""Iterative non-local shrinkage (NLS) reconstruction.

The solver alternates a closed-form shrinkage of every patch difference with
a quadratic image update that is diagonal in the Fourier domain, growing the
half-quadratic weight ``beta`` and shrinking the saturation threshold between
outer iterations.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import penalties as pen
from .grid import (
    Offset,
    OffsetSet,
    PatchGeometry,
    box_sum_filter,
    dft,
    idft,
    laplacian_symbol,
    shift_diff,
    shift_diff_adjoint,
)
from .operators import (
    InvalidModel,
    LinearOperator,
    MeasurementModel,
    NonFiniteIterate,
    pcg,
)
from .penalties import PenaltySpec

log = logging.getLogger(__name__)

F_UPDATE_MODES = ("analytic_fourier", "preconditioned_cg")


class Diverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shifted gathers shared by the stacked (all-q) code paths


@functools.lru_cache(maxsize=64)
def _gather_index(shape: tuple[int, int], offsets: tuple[Offset, ...]) -> np.ndarray:
    """Flat indices ``idx[k, y*W + x] = flat(x + q_k)`` with wraparound."""
    height, width = shape
    yy, xx = np.indices(shape)
    idx = np.empty((len(offsets), height * width), dtype=np.intp)
    for k, (dx, dy) in enumerate(offsets):
        idx[k] = (((yy + dy) % height) * width + (xx + dx) % width).ravel()
    return idx


def diff_stack(f: np.ndarray, offsets: Sequence[Offset]) -> np.ndarray:
    """``shift_diff(f, q)`` for every offset, stacked along axis 0."""
    idx = _gather_index(f.shape, tuple(offsets))
    return f[None] - f.ravel()[idx].reshape((len(offsets),) + f.shape)


def adjoint_diff_sum(h: np.ndarray, offsets: Sequence[Offset]) -> np.ndarray:
    """``sum_q D_q^H h_q`` for a stack ``h`` aligned with ``offsets``."""
    shape = h.shape[1:]
    neg = tuple((-dx, -dy) for dx, dy in offsets)
    idx = _gather_index(shape, neg)
    flat = h.reshape(len(offsets), -1)
    back = np.take_along_axis(flat, idx, axis=1)
    return (flat - back).sum(axis=0).reshape(shape)


def _as_stack(h, offsets: Sequence[Offset]) -> np.ndarray:
    if isinstance(h, Mapping):
        return np.stack([np.asarray(h[tuple(q)]) for q in offsets])
    arr = np.asarray(h)
    if arr.ndim != 3 or arr.shape[0] != len(offsets):
        raise ValueError("expected one image per neighborhood offset")
    return arr


# ---------------------------------------------------------------------------
# shrinkage weights


def patch_sq_norms(f: np.ndarray, geometry: PatchGeometry) -> np.ndarray:
    """``||P_x f - P_{x+q} f||^2`` for all ``x`` and every ``q`` in the neighborhood."""
    diffs = diff_stack(f, geometry.neighborhood)
    return box_sum_filter(np.abs(diffs) ** 2, geometry.patch.reflected())


@dataclass
class ShrinkageState:
    diffs: np.ndarray
    sq_norms: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt(self.sq_norms)

    @property
    def h(self) -> np.ndarray:
        return self.diffs * self.v


def shrinkage_state(
    f: np.ndarray, geometry: PatchGeometry, penalty: PenaltySpec, beta: float
) -> ShrinkageState:
    """Filtered evaluation of ``u_q``, ``v_q`` for the whole neighborhood."""
    diffs = diff_stack(f, geometry.neighborhood)
    sq = box_sum_filter(np.abs(diffs) ** 2, geometry.patch.reflected())
    u = pen.nu(np.sqrt(sq), penalty, beta)
    v = box_sum_filter(u, geometry.patch)
    return ShrinkageState(diffs, sq, u, v)


def patch_weights_fast(
    f: np.ndarray,
    q: Offset,
    geometry: PatchGeometry,
    penalty: PenaltySpec,
    beta: float,
    return_u: bool = False,
):
    """Pixel shrinkage weights ``v_q`` via two box filters.

    ``v_q = box( nu( sqrt( box(|D_q f|^2) ) ) )``.  The first filter runs over
    the reflected patch so that it yields the patch distance for any patch
    shape; for the usual symmetric patches the two filters coincide.
    """
    f = np.asarray(f, dtype=np.complex128)
    d2 = box_sum_filter(np.abs(shift_diff(f, q)) ** 2, geometry.patch.reflected())
    u = pen.nu(np.sqrt(d2), penalty, beta)
    v = box_sum_filter(u, geometry.patch)
    return (v, u) if return_u else v


def extract_patches(f: np.ndarray, patch: Sequence[Offset]) -> np.ndarray:
    """Array ``P[y, x, k] = f(x + p_k)`` holding every periodic patch."""
    height, width = f.shape
    yy, xx = np.indices(f.shape)
    return np.stack(
        [f[(yy + py) % height, (xx + px) % width] for px, py in patch], axis=-1
    )


def patch_weights_bruteforce(
    f: np.ndarray,
    q: Offset,
    geometry: PatchGeometry,
    penalty: PenaltySpec,
    beta: float,
    return_u: bool = False,
):
    """Reference ``v_q`` from explicitly extracted patches (test scale only)."""
    f = np.asarray(f, dtype=np.complex128)
    height, width = f.shape
    P = extract_patches(f, geometry.patch)
    yy, xx = np.indices(f.shape)
    Pq = P[(yy + q[1]) % height, (xx + q[0]) % width]
    dist = np.sqrt(np.sum(np.abs(P - Pq) ** 2, axis=-1))
    u = pen.nu(dist, penalty, beta)
    v = np.zeros(f.shape)
    for px, py in geometry.patch:
        v += u[(yy - py) % height, (xx - px) % width]
    return (v, u) if return_u else v


def shrunk_patches(
    f: np.ndarray, geometry: PatchGeometry, penalty: PenaltySpec, beta: float
) -> np.ndarray:
    """Auxiliary patches ``s[k, y, x, :] = (P_x f - P_{x+q_k} f) nu(||.||)``."""
    height, width = f.shape
    P = extract_patches(np.asarray(f, dtype=np.complex128), geometry.patch)
    yy, xx = np.indices(f.shape)
    out = []
    for dx, dy in geometry.neighborhood:
        t = P - P[(yy + dy) % height, (xx + dx) % width]
        scale = pen.nu(np.sqrt(np.sum(np.abs(t) ** 2, axis=-1)), penalty, beta)
        out.append(t * scale[..., None])
    return np.stack(out)


def h_from_patches(s: np.ndarray, geometry: PatchGeometry) -> np.ndarray:
    """Consolidate patch-wise auxiliaries into pixel images ``h_q(x) = sum_p s_{x-p,q}(p)``."""
    _, height, width, _ = s.shape
    yy, xx = np.indices((height, width))
    h = np.zeros(s.shape[:3], dtype=np.complex128)
    for k, (px, py) in enumerate(geometry.patch):
        h += s[:, (yy - py) % height, (xx - px) % width, k]
    return h


def h_images(f: np.ndarray, v, neighborhood: Sequence[Offset]) -> dict[Offset, np.ndarray]:
    """Shrunk differences ``h_q = shift_diff(f, q) * v_q``."""
    f = np.asarray(f, dtype=np.complex128)
    vs = _as_stack(v, neighborhood)
    return {tuple(q): shift_diff(f, q) * vs[k] for k, q in enumerate(neighborhood)}


# ---------------------------------------------------------------------------
# image update


def _normal_symbol(model: MeasurementModel, lam_beta_n: float, neighborhood) -> np.ndarray:
    return 2.0 * model.mask + lam_beta_n * _laplacian(model.shape, tuple(neighborhood))


@functools.lru_cache(maxsize=32)
def _laplacian(shape, neighborhood) -> np.ndarray:
    return laplacian_symbol(neighborhood, shape)


def f_update_fourier(
    model: MeasurementModel,
    h,
    lam: float,
    beta: float,
    neighborhood: Sequence[Offset],
    dc_epsilon: float = 1e-12,
    patch_count: int = 1,
) -> np.ndarray:
    """Closed-form minimizer of ``||Af-b||^2 + lam*beta/2 * R(f)``.

    Solves ``(2 a + lam*beta*n*sum|d_q|^2) F = 2 b0 + lam*beta*dft(sum D_q^H h_q)``
    entrywise, where ``n = patch_count``.  With ``n = |B|`` this is the exact
    image step for patch-domain auxiliaries consolidated into ``h``; ``n = 1``
    is the plain pixel-difference form.  Frequencies whose denominator falls
    below ``dc_epsilon`` (only DC, when unsampled) are set to zero.
    """
    h = _as_stack(h, neighborhood)
    if h.shape[1:] != model.shape:
        raise InvalidModel(f"h images {h.shape[1:]} do not match mask {model.shape}")
    lb = lam * beta
    num = 2.0 * model.b0 + lb * dft(adjoint_diff_sum(h, neighborhood))
    den = _normal_symbol(model, lb * patch_count, neighborhood)
    small = den < dc_epsilon
    F = np.where(small, 0.0, num / np.where(small, 1.0, den))
    return idft(F)


def euler_lagrange_residual(
    f: np.ndarray,
    model: MeasurementModel,
    h,
    lam: float,
    beta: float,
    neighborhood: Sequence[Offset],
    patch_count: int = 1,
) -> float:
    """Relative residual of the image-step normal equations, evaluated with
    explicit spatial differences (independent of the Fourier multipliers)."""
    h = _as_stack(h, neighborhood)
    lb = lam * beta
    op = model.operator()
    lhs = 2.0 * op.normal(f)
    rhs = 2.0 * op.adjoint(model.operator_data())
    for k, q in enumerate(neighborhood):
        lhs = lhs + lb * patch_count * shift_diff_adjoint(shift_diff(f, q), q)
        rhs = rhs + lb * shift_diff_adjoint(h[k], q)
    denom = np.linalg.norm(rhs)
    return float(np.linalg.norm(lhs - rhs) / (denom if denom > 0 else 1.0))


def f_update_cg(
    op: LinearOperator,
    b: np.ndarray,
    h,
    lam: float,
    beta: float,
    neighborhood: Sequence[Offset],
    x0: np.ndarray,
    cg_iters: int = 5,
    cg_tol: float = 1e-8,
    patch_count: int = 1,
) -> np.ndarray:
    """Image step for a general operator by preconditioned CG from ``x0``.

    The preconditioner inverts ``2 diag_estimate + lam*beta*n*sum|d_q|^2``
    in the Fourier domain, which is exact for mask-diagonal operators.
    """
    h = _as_stack(h, neighborhood)
    shape = h.shape[1:]
    lb = lam * beta
    rhs = 2.0 * op.adjoint(b) + lb * adjoint_diff_sum(h, neighborhood)
    offsets = tuple(neighborhood)

    def apply(x):
        return 2.0 * op.normal(x) + lb * patch_count * adjoint_diff_sum(diff_stack(x, offsets), offsets)

    den = 2.0 * op.diag_estimate() + lb * patch_count * _laplacian(shape, offsets)
    den = np.broadcast_to(den, shape)
    inv = np.where(den > 1e-12, 1.0 / np.where(den > 1e-12, den, 1.0), 0.0)

    def precond(r):
        return idft(inv * dft(r))

    x, _ = pcg(apply, rhs, np.asarray(x0, dtype=np.complex128), precond, cg_iters, cg_tol)
    return x


# ---------------------------------------------------------------------------
# objectives


def regularizer(norms: np.ndarray, penalty: PenaltySpec, use_hat: bool, beta: float | None) -> float:
    if use_hat:
        if beta is None:
            raise ValueError("beta is required for the surrogate cost")
        return float(np.sum(pen.phi_hat(norms, penalty, beta)))
    return float(np.sum(pen.phi(norms, penalty)))


def eval_cost(
    f: np.ndarray,
    model,
    penalty: PenaltySpec,
    lam: float,
    geometry: PatchGeometry,
    use_hat: bool = False,
    beta: float | None = None,
) -> float:
    """``||Af-b||^2 + lam * sum_x sum_q phi(||P_x f - P_{x+q} f||)``.

    With ``use_hat`` the Huber-like surrogate at ``beta`` replaces ``phi``.
    """
    f = np.asarray(f, dtype=np.complex128)
    norms = np.sqrt(patch_sq_norms(f, geometry))
    return model.data_misfit(f) + lam * regularizer(norms, penalty, use_hat, beta)


def pixel_form_objective(f: np.ndarray, h, neighborhood: Sequence[Offset], patch_count: int = 1) -> float:
    """``n * sum_q ||D_q f - h_q / n||^2`` with ``n = patch_count``.

    For ``n = 1`` this is ``sum_q ||D_q f - h_q||^2``.  With ``n = |B|`` it
    differs from the patch-domain quadratic by a constant independent of ``f``.
    """
    h = _as_stack(h, neighborhood)
    f = np.asarray(f, dtype=np.complex128)
    total = 0.0
    for k, q in enumerate(neighborhood):
        r = shift_diff(f, q) - h[k] / patch_count
        total += float(np.vdot(r, r).real)
    return patch_count * total


def patch_form_objective(f: np.ndarray, s: np.ndarray, geometry: PatchGeometry) -> float:
    """``sum_x sum_q ||P_x f - P_{x+q} f - s_{x,q}||^2`` by direct patch extraction."""
    f = np.asarray(f, dtype=np.complex128)
    height, width = f.shape
    P = extract_patches(f, geometry.patch)
    yy, xx = np.indices(f.shape)
    total = 0.0
    for k, (dx, dy) in enumerate(geometry.neighborhood):
        r = P - P[(yy + dy) % height, (xx + dx) % width] - s[k]
        total += float(np.sum(np.abs(r) ** 2))
    return total


# ---------------------------------------------------------------------------
# configuration and trace


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    penalty: PenaltySpec
    geometry: PatchGeometry = field(default_factory=PatchGeometry.square)
    beta_init: float = 0.01
    beta_incfactor: float = 2.0
    T_init: float | None = None
    T_decfactor: float = 0.95
    T_min: float | None = None
    sigma_decfactor: float = 1.0
    inner_iters: int = 20
    outer_iters: int = 35
    f_update: str = "analytic_fourier"
    cg_iters: int = 5
    cg_tol: float = 1e-8
    dc_epsilon: float = 1e-12
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not self.beta_init > 0:
            raise ValueError("beta_init must be positive")
        if not self.beta_incfactor >= 1:
            raise ValueError("beta_incfactor must be at least 1")
        if not math.isfinite(self.beta_init * self.beta_incfactor**self.outer_iters):
            raise ValueError("beta schedule overflows")
        if self.inner_iters < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not 0 < self.T_decfactor <= 1:
            raise ValueError("T_decfactor must lie in (0, 1]")
        if not 0 < self.sigma_decfactor <= 1:
            raise ValueError("sigma_decfactor must lie in (0, 1]")
        if self.T_init is not None and not self.T_init > 0:
            raise ValueError("T_init must be positive")
        if self.f_update not in F_UPDATE_MODES:
            raise ValueError(f"f_update must be one of {F_UPDATE_MODES}")
        if self.cg_iters < 1 or not self.cg_tol > 0:
            raise ValueError("cg_iters and cg_tol must be positive")
        if self.dc_epsilon < 0:
            raise ValueError("dc_epsilon must be non-negative")

    @property
    def initial_penalty(self) -> PenaltySpec:
        if self.T_init is None:
            return self.penalty
        return self.penalty.with_params(T=self.T_init)

    def schedule(self) -> Iterator[tuple[int, float, PenaltySpec]]:
        """Yield ``(outer, beta, penalty)`` for each outer block."""
        spec = self.initial_penalty
        T0, s0 = spec.T, spec.sigma
        T_floor = self.T_min if self.T_min is not None else T0 / 20.0
        T, sigma, beta = T0, s0, self.beta_init
        for outer in range(self.outer_iters):
            yield outer, beta, spec.with_params(T=T, sigma=sigma)
            beta *= self.beta_incfactor
            T = max(T * self.T_decfactor, T_floor)
            sigma *= self.sigma_decfactor

    def final_penalty(self) -> PenaltySpec:
        return list(self.schedule())[-1][2]

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


TRACE_COLUMNS = ("outer", "inner", "beta", "T", "cost_hat", "cost_raw", "seconds", "snr_db")


@dataclass
class TraceRecord:
    outer: int
    inner: int
    beta: float
    T: float
    cost_hat: float
    cost_raw: float
    seconds: float
    snr_db: float = math.nan


@dataclass
class SolverTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def blocks(self) -> dict[int, list[TraceRecord]]:
        out: dict[int, list[TraceRecord]] = {}
        for r in self.records:
            out.setdefault(r.outer, []).append(r)
        return out

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])

    @classmethod
    def from_csv(cls, path) -> "SolverTrace":
        trace = cls()
        names = {f.name: f.type for f in fields(TraceRecord)}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                kw = {}
                for k in names:
                    kw[k] = int(row[k]) if k in ("outer", "inner") else float(row[k])
                trace.append(TraceRecord(**kw))
        return trace


def snr_or_nan(rec: np.ndarray, truth: np.ndarray | None) -> float:
    if truth is None:
        return math.nan
    from .metrics import snr_db

    return snr_db(rec, truth)


# ---------------------------------------------------------------------------
# main loop


def _image_step(model, config: SolverConfig, state: ShrinkageState, lam, beta, f):
    n = config.geometry.patch_count
    h = state.h
    if config.f_update == "analytic_fourier":
        if not isinstance(model, MeasurementModel):
            raise InvalidModel("the analytic image step needs a mask-diagonal model")
        return f_update_fourier(
            model, h, lam, beta, config.geometry.neighborhood, config.dc_epsilon, n
        )
    return f_update_cg(
        model.operator(),
        model.operator_data(),
        h,
        lam,
        beta,
        config.geometry.neighborhood,
        f,
        config.cg_iters,
        config.cg_tol,
        n,
    )


def run_nls(model, config: SolverConfig, ground_truth: np.ndarray | None = None):
    """Reconstruct an image; returns ``(f, trace)``.

    Starts from the zero-filled image.  Each outer block runs
    ``inner_iters`` shrink/update pairs at fixed ``beta`` and penalty, then
    grows ``beta`` and decays the threshold.  The trace holds one row per
    iterate: ``inner = 0`` is the block's starting image, costs evaluated at
    the block's ``beta`` and penalty.
    """
    f = np.asarray(model.zero_filled(), dtype=np.complex128)
    model.check_grid(f.shape)
    geometry, lam = config.geometry, config.lam
    trace = SolverTrace()
    start = time.perf_counter()
    prev_block_cost = None

    state = None
    for outer, beta, spec in config.schedule():
        for inner in range(config.inner_iters + 1):
            state = shrinkage_state(f, geometry, spec, beta)
            misfit = model.data_misfit(f)
            reg_raw, reg_hat = pen.phi_and_hat_sums(state.norms, spec, beta)
            cost_hat = misfit + lam * reg_hat
            cost_raw = misfit + lam * reg_raw
            trace.append(
                TraceRecord(
                    outer, inner, beta, spec.T, cost_hat, cost_raw,
                    time.perf_counter() - start, snr_or_nan(f, ground_truth),
                )
            )
            if inner == config.inner_iters:
                break
            f = _image_step(model, config, state, lam, beta, f)
            if not np.all(np.isfinite(f)):
                raise NonFiniteIterate(f"non-finite image at outer {outer}, inner {inner}")
        block_cost = trace.final.cost_hat
        if prev_block_cost is not None and prev_block_cost > 0:
            if block_cost > config.divergence_factor * prev_block_cost:
                raise Diverged(
                    f"tracked cost rose from {prev_block_cost:.4g} to {block_cost:.4g} "
                    f"in outer iteration {outer}"
                )
        prev_block_cost = block_cost
        log.debug("outer %d beta=%.3g cost=%.6g", outer, beta, block_cost)
    return f, trace


def zero_filled(model) -> np.ndarray:
    return np.asarray(model.zero_filled(), dtype=np.complex128)
