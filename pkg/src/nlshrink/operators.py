"""Measurement models, linear operators and preconditioned CG."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import dft, idft


class InvalidModel(ValueError):
    pass


class NonFiniteIterate(ArithmeticError):
    pass


class LinearOperator:
    """Minimal operator interface: ``forward``, ``adjoint`` and an optional
    ``diag_estimate`` used to build the Fourier-domain preconditioner."""

    shape: tuple[int, int]

    def forward(self, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, f: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(f))

    def diag_estimate(self):
        return 1.0


class IdentityOperator(LinearOperator):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, f):
        return f

    def adjoint(self, y):
        return y

    def normal(self, f):
        return f


class MaskedFourierOperator(LinearOperator):
    """Unitary DFT followed by a k-space mask; range is the full grid with
    zeros at unsampled locations."""

    def __init__(self, mask: np.ndarray):
        self.mask = np.asarray(mask, dtype=bool)
        self.shape = self.mask.shape
        self._scale = math.sqrt(self.mask.size)

    def forward(self, f):
        return self.mask * dft(f) / self._scale

    def adjoint(self, y):
        return idft(self.mask * y) * self._scale

    def normal(self, f):
        return idft(self.mask * dft(f))

    def diag_estimate(self):
        return self.mask.astype(np.float64)


@dataclass
class MeasurementModel:
    """Binary k-space mask ``mask`` and zero-filled samples ``b0`` (same grid).

    ``b0`` lives in the units of :func:`nlshrink.grid.dft`; the measurement
    vector seen by the unitary operator is ``b0[mask] / sqrt(N)``.
    """

    mask: np.ndarray
    b0: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.b0 = np.asarray(self.b0, dtype=np.complex128)
        if self.mask.ndim != 2 or self.mask.shape != self.b0.shape:
            raise InvalidModel(f"mask {self.mask.shape} and data {self.b0.shape} disagree")
        self.b0 = np.where(self.mask, self.b0, 0)
        if not np.all(np.isfinite(self.b0)):
            raise InvalidModel("measurements contain NaN or Inf")

    @classmethod
    def full(cls, image: np.ndarray) -> "MeasurementModel":
        """Fully sampled model of ``image``; its data term is ``||f - image||^2``."""
        image = np.asarray(image, dtype=np.complex128)
        return cls(np.ones(image.shape, dtype=bool), dft(image))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def b(self) -> np.ndarray:
        return self.b0[self.mask] / math.sqrt(self.mask.size)

    def zero_filled(self) -> np.ndarray:
        return idft(self.b0)

    def operator(self) -> MaskedFourierOperator:
        return MaskedFourierOperator(self.mask)

    def operator_data(self) -> np.ndarray:
        return self.b0 / math.sqrt(self.mask.size)

    def data_misfit(self, f: np.ndarray) -> float:
        r = self.mask * dft(f) - self.b0
        return float(np.vdot(r, r).real) / self.mask.size

    def check_grid(self, shape) -> None:
        if tuple(shape) != self.shape:
            raise InvalidModel(f"image grid {tuple(shape)} does not match mask {self.shape}")


@dataclass
class OperatorModel:
    """General model ``||A f - b||^2`` for operators that are not mask-diagonal.
    Only the CG f-update can use it."""

    op: LinearOperator
    data: np.ndarray

    @property
    def shape(self):
        return self.op.shape

    def zero_filled(self):
        return self.op.adjoint(self.data)

    def operator(self):
        return self.op

    def operator_data(self):
        return self.data

    def data_misfit(self, f):
        r = self.op.forward(f) - self.data
        return float(np.vdot(r, r).real)

    def check_grid(self, shape):
        if tuple(shape) != tuple(self.shape):
            raise InvalidModel(f"image grid {tuple(shape)} does not match operator {self.shape}")


def pcg(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: np.ndarray,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 50,
    tol: float = 1e-8,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, int]:
    """Preconditioned conjugate gradients for a Hermitian positive system.

    Stops after ``max_iter`` steps or once ``||r|| <= tol * ||rhs||``.
    Returns the iterate and the number of steps taken.
    """
    if precond is None:
        precond = lambda r: r  # noqa: E731
    x = np.array(x0, dtype=np.complex128, copy=True)
    r = rhs - apply(x)
    rhs_norm = np.linalg.norm(rhs)
    stop = tol * (rhs_norm if rhs_norm > 0 else 1.0)
    if np.linalg.norm(r) <= stop:
        return x, 0
    z = precond(r)
    p = z.copy()
    rz = np.vdot(r, z).real
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = np.vdot(p, Ap).real
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if not np.all(np.isfinite(x)):
            raise NonFiniteIterate("CG iterate became non-finite")
        if callback is not None:
            callback(it, x)
        if np.linalg.norm(r) <= stop:
            return x, it
        z = precond(r)
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it
