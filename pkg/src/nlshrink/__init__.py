"""Non-local shrinkage reconstruction of images from undersampled Fourier data."""

from .grid import OffsetSet, PatchGeometry, box_sum_filter, dft, diff_multiplier, idft, shift_diff
from .harness import measure, run_experiment
from .irw import IrwConfig, irw_step, irw_weights, run_irw
from .masks import SamplingMask, gen_mask
from .metrics import psnr_db, snr_db
from .operators import MaskedFourierOperator, MeasurementModel
from .penalties import PenaltyKind, PenaltySpec, dead_zone_radius, nu, phi, phi_hat
from .phantoms import make_phantom
from .solver import (
    Diverged,
    SolverConfig,
    SolverTrace,
    eval_cost,
    f_update_cg,
    f_update_fourier,
    h_images,
    patch_weights_bruteforce,
    patch_weights_fast,
    run_nls,
)

__all__ = [
    "Diverged",
    "IrwConfig",
    "MaskedFourierOperator",
    "MeasurementModel",
    "OffsetSet",
    "PatchGeometry",
    "PenaltyKind",
    "PenaltySpec",
    "SamplingMask",
    "SolverConfig",
    "SolverTrace",
    "box_sum_filter",
    "dead_zone_radius",
    "dft",
    "diff_multiplier",
    "eval_cost",
    "f_update_cg",
    "f_update_fourier",
    "gen_mask",
    "h_images",
    "idft",
    "irw_step",
    "irw_weights",
    "make_phantom",
    "measure",
    "nu",
    "patch_weights_bruteforce",
    "patch_weights_fast",
    "phi",
    "phi_hat",
    "psnr_db",
    "run_experiment",
    "run_irw",
    "run_nls",
    "shift_diff",
    "snr_db",
]

__version__ = "0.1.0"
