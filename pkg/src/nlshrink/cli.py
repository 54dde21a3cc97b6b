"""Command-line interface.

Exit codes: 0 success, 2 bad flags or parameters, 3 file I/O or format
problems, 4 solver divergence.  Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import penalties as pen
from .config import ConfigError, ConfigFileError, irw_config, merge, read_toml, solver_config
from .grid import dft
from .harness import measure, run_experiment
from .imageio import ImageFormatError, read_image, write_cimg, write_magnitude_png
from .irw import run_irw
from .masks import BadParams, gen_mask
from .metrics import psnr_db, snr_db
from .operators import InvalidModel, MeasurementModel, NonFiniteIterate
from .penalties import DomainError, PenaltyKind, PenaltySpec
from .phantoms import UnknownPhantom, make_phantom
from .solver import F_UPDATE_MODES, Diverged, SolverTrace, run_nls

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("nlshrink")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


def _dims(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    try:
        vals = [int(p) for p in parts if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}; use N or HxW") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}; use N or HxW")
    return vals[0], vals[1]


def _kind(text: str) -> str:
    try:
        return pen.parse_kind(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------------------
# shared flag groups


def _add_penalty_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("penalty")
    g.add_argument("--penalty", type=_kind, required=required, help="metric kind")
    g.add_argument("--p", type=float, help="power for lp kinds")
    g.add_argument("--T", type=float, help="saturation threshold")
    g.add_argument("--sigma", type=float, help="width for h1/peyre/nltv")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file; flags override its values")
    p.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    _add_penalty_flags(p)
    g = p.add_argument_group("solver")
    g.add_argument("--beta-init", type=float)
    g.add_argument("--beta-incfactor", type=float)
    g.add_argument("--T-init", type=float)
    g.add_argument("--T-decfactor", type=float)
    g.add_argument("--T-min", type=float)
    g.add_argument("--sigma-decfactor", type=float)
    g.add_argument("--inner-iters", type=int)
    g.add_argument("--outer-iters", type=int)
    g.add_argument("--f-update", choices=F_UPDATE_MODES)
    g.add_argument("--cg-iters", type=int)
    g.add_argument("--cg-tol", type=float)
    g.add_argument("--dc-epsilon", type=float)
    g.add_argument("--divergence-factor", type=float)
    g.add_argument("--weight-floor", type=float, help="IRW only")
    g.add_argument("--patch-radius", type=int)
    g.add_argument("--search-radius", type=int)
    g.add_argument("--local-tv", action="store_true", default=None,
                   help="1-pixel patches, right/down neighbours")


_NLS_ONLY = ("beta_init", "beta_incfactor", "inner_iters", "f_update", "dc_epsilon", "divergence_factor")
_IRW_ONLY = ("weight_floor",)
_SHARED = ("T_init", "T_decfactor", "T_min", "sigma_decfactor", "outer_iters", "cg_iters", "cg_tol")


def _config_mapping(args, algorithm: str) -> dict:
    base = read_toml(args.config) if args.config else {}
    flags: dict = {"lam": args.lam}
    names = _SHARED + (_NLS_ONLY if algorithm == "nls" else _IRW_ONLY)
    for name in names:
        flags[name] = getattr(args, name, None)
    for name in (_IRW_ONLY if algorithm == "nls" else _NLS_ONLY):
        if getattr(args, name, None) is not None:
            raise UsageError(f"--{name.replace('_', '-')} does not apply to {algorithm}")
    flags["penalty"] = {"kind": args.penalty, "p": args.p, "T": args.T, "sigma": args.sigma}
    flags["geometry"] = {
        "patch_radius": args.patch_radius,
        "search_radius": args.search_radius,
        "local_tv": args.local_tv,
    }
    data = merge(base, flags)
    if data.get("lam") is None:
        raise UsageError("--lambda is required (or 'lam' in --config)")
    if not data.get("penalty", {}).get("kind"):
        raise UsageError("--penalty is required (or [penalty] kind in --config)")
    return data


def _build_config(args, algorithm: str):
    data = _config_mapping(args, algorithm)
    return solver_config(data) if algorithm == "nls" else irw_config(data)


def _load(path) -> np.ndarray:
    try:
        return read_image(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None


def _load_mask(path) -> np.ndarray:
    return np.abs(_load(path)) > 0.5


def _png_path(out: Path) -> Path:
    return out.with_suffix(".png")


def _write_recon(out: Path, image: np.ndarray, max_intensity: float) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cimg(out, image)
    write_magnitude_png(_png_path(out), image, max_intensity)


def _solve(model, args, truth):
    algorithm = args.algorithm
    cfg = _build_config(args, algorithm)
    runner = run_nls if algorithm == "nls" else run_irw
    f, trace = runner(model, cfg, truth)
    last = trace.final
    print(f"{algorithm}: final cost {last.cost_raw:.8g} after {last.seconds:.3f} s", file=sys.stderr)
    if truth is not None:
        print(f"snr_db {snr_db(f, truth):.4f} psnr_db {psnr_db(f, truth, args.max_intensity):.4f}")
    return f, trace


# ---------------------------------------------------------------------------
# subcommands


def cmd_reconstruct(args) -> int:
    b0 = _load(args.kspace)
    mask = _load_mask(args.mask)
    if b0.shape != mask.shape:
        raise InputError(f"k-space {b0.shape} and mask {mask.shape} differ in size")
    truth = _load(args.truth) if args.truth else None
    if truth is not None and truth.shape != b0.shape:
        raise InputError(f"truth {truth.shape} and k-space {b0.shape} differ in size")
    model = MeasurementModel(mask, b0)
    f, trace = _solve(model, args, truth)
    _write_recon(args.out, f, args.max_intensity)
    if args.trace:
        trace.to_csv(args.trace)
    return EXIT_OK


def cmd_denoise(args) -> int:
    image = _load(args.image)
    truth = _load(args.truth) if args.truth else None
    noisy = image
    if args.noise_sigma:
        noisy = measure(image, np.ones(image.shape, dtype=bool), args.noise_sigma, args.seed).zero_filled()
        if truth is None:
            truth = image
    # the fully sampled unitary Fourier model has the identity data term ||f - g||^2
    model = MeasurementModel(np.ones(image.shape, dtype=bool), dft(noisy))
    f, trace = _solve(model, args, truth)
    _write_recon(args.out, f, args.max_intensity)
    if args.trace:
        trace.to_csv(args.trace)
    return EXIT_OK


def cmd_maskgen(args) -> int:
    params = {k: v for k, v in (("fraction", args.fraction), ("R", args.R),
                                ("spokes", args.spokes), ("angle", args.angle)) if v is not None}
    mask = gen_mask(args.kind, args.dims, params, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_cimg(args.out, mask.keep.astype(np.float64), complex_data=False)
    write_magnitude_png(_png_path(args.out), np.fft.fftshift(mask.keep).astype(float), 1.0)
    print(f"{mask.kind}: kept {int(mask.keep.sum())} of {mask.keep.size} "
          f"(fraction {mask.fraction:.4f}, R {mask.acceleration:.3f})")
    return EXIT_OK


def cmd_phantom(args) -> int:
    ph = make_phantom(args.name, args.dims, args.seed, args.phase_ramp)
    _write_recon(args.out, ph.image, args.max_intensity)
    if args.kspace_out:
        if not args.mask:
            raise UsageError("--kspace-out needs --mask")
        mask = _load_mask(args.mask)
        if mask.shape != ph.image.shape:
            raise InputError(f"mask {mask.shape} and phantom {ph.image.shape} differ in size")
        model = measure(ph, mask, args.noise_sigma, args.seed)
        write_cimg(args.kspace_out, model.b0, complex_data=True)
    elif args.mask:
        raise UsageError("--mask is only used together with --kspace-out")
    return EXIT_OK


def cmd_shrink_table(args) -> int:
    if not args.step > 0 or not args.tmax > 0:
        raise UsageError("--step and --tmax must be positive")
    if not args.beta > 0:
        raise UsageError("--beta must be positive")
    kinds = [k.value for k in PenaltyKind] if args.penalty == "all" else [_kind(args.penalty)]
    params = dict(pen.TABLE_DEFAULTS)
    params.update({k: v for k, v in (("p", args.p), ("T", args.T), ("sigma", args.sigma)) if v is not None})
    t = np.arange(0.0, args.tmax + 0.5 * args.step, args.step)
    curves = {}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "t", "phi", "shrunk"])
        for kind in kinds:
            spec = PenaltySpec(kind, **params)
            ph = np.asarray(pen.phi(t, spec))
            sh = t * np.asarray(pen.nu(t, spec, args.beta))
            curves[spec.describe()] = (t, ph, sh)
            for row in zip(t, ph, sh):
                w.writerow([kind] + [repr(float(v)) for v in row])
    if args.plot:
        from .plotting import shrink_curves

        shrink_curves(args.plot, curves)
    return EXIT_OK


def time_to_reach(trace: SolverTrace, target: float) -> float:
    """First wall-clock time at which the true cost is at most ``target``."""
    cost, sec = trace.column("cost_raw"), trace.column("seconds")
    hit = np.nonzero(cost <= target)[0]
    return float(sec[hit[0]]) if hit.size else math.inf


def cmd_compare(args) -> int:
    traces = {}
    for label, path in (("nls", args.nls), ("irw", args.irw)):
        try:
            traces[label] = SolverTrace.from_csv(path)
        except FileNotFoundError:
            raise InputError(f"{path}: no such file") from None
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: not a trace CSV ({exc})") from None
        if not len(traces[label]):
            raise InputError(f"{path}: empty trace")
    finals = {k: t.final.cost_raw for k, t in traces.items()}
    best = min(finals.values())
    target = best * (1.0 + args.tolerance)
    reach = {k: time_to_reach(t, target) for k, t in traces.items()}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "seconds", "cost_raw", "cost_hat"])
        for label, tr in traces.items():
            for r in tr:
                w.writerow([label, repr(r.seconds), repr(r.cost_raw), repr(r.cost_hat)])
    rel = abs(finals["nls"] - finals["irw"]) / best if best else 0.0
    print(f"final cost nls {finals['nls']:.8g} irw {finals['irw']:.8g} relative gap {rel:.3%}")
    ratio = reach["irw"] / reach["nls"] if reach["nls"] > 0 else math.inf
    print(f"seconds to within {args.tolerance:.1%} of best: nls {reach['nls']:.4g} "
          f"irw {reach['irw']:.4g} speedup {ratio:.2f}x")
    if args.plot:
        from .plotting import cost_vs_time

        cost_vs_time(args.plot, {k: (t.column("seconds"), t.column("cost_raw")) for k, t in traces.items()})
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = read_toml(args.spec)
    if args.no_timing:
        spec["record_timing"] = False
    rows = run_experiment(spec, args.out_dir)
    print(f"wrote {len(rows)} rows to {args.out_dir / 'results.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlshrink", description="Non-local shrinkage reconstruction from undersampled Fourier data."
    )
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("reconstruct", help="reconstruct an image from k-space samples")
    p.add_argument("--kspace", type=Path, required=True, help="full-grid k-space CIMG (zeros off the mask)")
    p.add_argument("--mask", type=Path, required=True, help="sampling mask (CIMG or PNG, nonzero = kept)")
    p.add_argument("--out", type=Path, required=True, help="output CIMG; a magnitude PNG is written alongside")
    p.add_argument("--truth", type=Path, help="reference image for SNR reporting")
    p.add_argument("--algorithm", choices=("nls", "irw"), default="nls")
    p.add_argument("--trace", type=Path, help="per-iteration trace CSV")
    p.add_argument("--max-intensity", type=float, default=255.0)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("denoise", help="denoise an image (identity measurement operator)")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path)
    p.add_argument("--noise-sigma", type=float, default=0.0, help="add simulated noise first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algorithm", choices=("nls", "irw"), default="nls")
    p.add_argument("--trace", type=Path)
    p.add_argument("--max-intensity", type=float, default=255.0)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("maskgen", help="generate a k-space sampling mask")
    p.add_argument("--kind", required=True, help="random, cartesian_lines, radial_gridded or full")
    p.add_argument("--dims", type=_dims, required=True, help="N or HxW")
    p.add_argument("--fraction", type=float)
    p.add_argument("--R", type=float, help="acceleration")
    p.add_argument("--spokes", type=int)
    p.add_argument("--angle", type=float, help="radial angle offset in radians")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("phantom", help="synthesize a phantom, optionally with simulated k-space")
    p.add_argument("--name", required=True)
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phase-ramp", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mask", type=Path, help="mask used for --kspace-out")
    p.add_argument("--kspace-out", type=Path, help="write masked k-space samples here")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--max-intensity", type=float, default=255.0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("shrink-table", help="tabulate metric and shrinkage curves")
    p.add_argument("--penalty", required=True, help="metric kind or 'all'")
    p.add_argument("--beta", type=float, default=pen.TABLE_BETA)
    p.add_argument("--p", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--tmax", type=float, default=3.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", type=Path, help="also draw the curves to this PNG")
    p.set_defaults(func=cmd_shrink_table)

    p = sub.add_parser("compare", help="join NLS and IRW traces into a cost-vs-time table")
    p.add_argument("--nls", type=Path, required=True)
    p.add_argument("--irw", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tolerance", type=float, default=0.02, help="relative gap defining a matched cost")
    p.add_argument("--plot", type=Path)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", help="run an experiment grid from a TOML description")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--no-timing", action="store_true", help="write nan runtimes for byte-identical reruns")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Diverged, NonFiniteIterate) as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, ImageFormatError, InvalidModel, ConfigFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BadParams, UnknownPhantom, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
