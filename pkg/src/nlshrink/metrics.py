"""Reconstruction quality in decibels."""

from __future__ import annotations

import math

import numpy as np


class DegenerateReference(ValueError):
    pass


def _error_norm(rec, orig) -> float:
    rec = np.asarray(rec)
    orig = np.asarray(orig)
    if rec.shape != orig.shape:
        raise ValueError(f"shape mismatch {rec.shape} vs {orig.shape}")
    return float(np.linalg.norm(rec - orig))


def snr_db(rec, orig) -> float:
    """``20 log10(||orig||_F / ||rec - orig||_F)``; ``inf`` for an exact match."""
    ref = float(np.linalg.norm(np.asarray(orig)))
    if ref == 0:
        raise DegenerateReference("reference image is identically zero")
    err = _error_norm(rec, orig)
    if err == 0:
        return math.inf
    return 20.0 * math.log10(ref / err)


def psnr_db(rec, orig, max_intensity: float = 255.0) -> float:
    """``20 log10(MAX sqrt(Nx Ny) / ||rec - orig||_F)``; ``inf`` for an exact match."""
    if not max_intensity > 0:
        raise ValueError("max_intensity must be positive")
    err = _error_norm(rec, orig)
    if err == 0:
        return math.inf
    return 20.0 * math.log10(max_intensity * math.sqrt(np.asarray(orig).size) / err)
