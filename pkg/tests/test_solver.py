import math

import numpy as np
import pytest

from nlshrink import penalties as pen
from nlshrink.grid import OffsetSet, PatchGeometry, dft, idft, shift_diff
from nlshrink.harness import measure
from nlshrink.masks import gen_mask
from nlshrink.metrics import snr_db
from nlshrink.operators import (
    IdentityOperator,
    InvalidModel,
    MaskedFourierOperator,
    MeasurementModel,
    OperatorModel,
)
from nlshrink.penalties import PenaltySpec
from nlshrink.phantoms import make_phantom
from nlshrink.solver import (
    Diverged,
    SolverConfig,
    SolverTrace,
    euler_lagrange_residual,
    eval_cost,
    extract_patches,
    f_update_cg,
    f_update_fourier,
    h_from_patches,
    h_images,
    patch_form_objective,
    patch_weights_bruteforce,
    patch_weights_fast,
    pixel_form_objective,
    run_nls,
    shrinkage_state,
    shrunk_patches,
)

from conftest import rand_complex

KINDS = [PenaltySpec("lp_thresholded", T=2.0), PenaltySpec("l1"), PenaltySpec("h1", sigma=1.0),
         PenaltySpec("peyre", sigma=1.0), PenaltySpec("nltv", sigma=1.0)]


def random_mask(rng, shape, fraction=0.4):
    keep = rng.random(shape) < fraction
    keep[0, 0] = True
    return keep


def random_h(rng, neighborhood, shape):
    return np.stack([rand_complex(rng, shape) for _ in neighborhood])


class TestWeights:
    @pytest.mark.parametrize("penalty", KINDS, ids=lambda s: s.kind.value)
    @pytest.mark.parametrize("beta", [0.01, 1.0, 100.0])
    def test_fast_matches_bruteforce(self, rng, penalty, beta):
        geom = PatchGeometry(OffsetSet.square(1), OffsetSet.square(2, exclude_zero=True))
        f = rand_complex(rng, (16, 16))
        for q in geom.neighborhood:
            fast = patch_weights_fast(f, q, geom, penalty, beta)
            slow = patch_weights_bruteforce(f, q, geom, penalty, beta)
            assert np.max(np.abs(fast - slow)) <= 1e-10

    def test_asymmetric_patch(self, rng):
        geom = PatchGeometry(OffsetSet([(0, 0), (1, 0), (1, 1), (0, 1), (2, 1)]), OffsetSet([(1, 0), (-2, 1)]))
        f = rand_complex(rng, (10, 12))
        for q in geom.neighborhood:
            np.testing.assert_allclose(
                patch_weights_fast(f, q, geom, KINDS[1], 1.0),
                patch_weights_bruteforce(f, q, geom, KINDS[1], 1.0),
                atol=1e-10,
            )

    def test_constant_image_has_zero_weights(self):
        f = np.full((8, 8), 3 - 2j)
        geom = PatchGeometry.square()
        for q in geom.neighborhood:
            assert np.all(patch_weights_fast(f, q, geom, KINDS[0], 1.0) == 0)

    def test_zero_image(self):
        geom = PatchGeometry.square()
        assert np.all(patch_weights_bruteforce(np.zeros((6, 6)), (1, 0), geom, KINDS[2], 1.0) == 0)

    def test_single_pixel_patch(self, rng):
        f = rand_complex(rng, (4, 4))
        geom = PatchGeometry(OffsetSet([(0, 0)]), OffsetSet([(1, 1)]))
        v = patch_weights_bruteforce(f, (1, 1), geom, KINDS[1], 2.0)
        np.testing.assert_allclose(v, pen.nu(np.abs(shift_diff(f, (1, 1))), KINDS[1], 2.0))

    def test_bump_counts_covering_pairs(self):
        f = np.zeros((16, 16), dtype=complex)
        by, bx = 8, 8
        f[by, bx] = 1000.0
        geom = PatchGeometry.square()
        spec = PenaltySpec("lp_thresholded", T=1.0)
        patch = list(geom.patch)

        def touches(x, y):
            return any(((x + px) % 16, (y + py) % 16) == (bx, by) for px, py in patch)

        for q in [(1, 0), (-1, 1)]:
            v = patch_weights_fast(f, q, geom, spec, 1.0)
            expect = np.zeros((16, 16))
            for y in range(16):
                for x in range(16):
                    for px, py in patch:
                        x0, y0 = x - px, y - py
                        if touches(x0, y0) or touches(x0 + q[0], y0 + q[1]):
                            expect[y, x] += 1
            np.testing.assert_array_equal(v, expect)

    def test_shrinkage_state_stack_matches_single(self, rng):
        geom = PatchGeometry.square(1, 2)
        f = rand_complex(rng, (12, 12))
        st = shrinkage_state(f, geom, KINDS[0], 0.5)
        for k, q in enumerate(geom.neighborhood):
            np.testing.assert_allclose(st.v[k], patch_weights_fast(f, q, geom, KINDS[0], 0.5), atol=1e-12)


class TestHImages:
    def test_trivial_weights(self, rng):
        f = rand_complex(rng, (6, 6))
        nb = OffsetSet.square(1, exclude_zero=True)
        zero = h_images(f, np.zeros((len(nb), 6, 6)), nb)
        one = h_images(f, {q: np.ones((6, 6)) for q in nb}, nb)
        for q in nb:
            assert np.all(zero[q] == 0)
            np.testing.assert_allclose(one[q], shift_diff(f, q))

    def test_never_grows(self, rng):
        f = rand_complex(rng, (8, 8))
        nb = OffsetSet.square(1, exclude_zero=True)
        v = rng.random((len(nb), 8, 8))
        h = h_images(f, v, nb)
        for q in nb:
            assert np.all(np.abs(h[q]) <= np.abs(shift_diff(f, q)) + 1e-15)

    def test_patch_consolidation(self, rng):
        # shrunk patch differences, summed back onto pixels, equal the filtered h images
        geom = PatchGeometry.square(1, 1)
        f = rand_complex(rng, (10, 10))
        spec = PenaltySpec("h1", sigma=1.0)
        s = shrunk_patches(f, geom, spec, 2.0)
        st = shrinkage_state(f, geom, spec, 2.0)
        np.testing.assert_allclose(h_from_patches(s, geom), st.h, atol=1e-12)


class TestFourierUpdate:
    def test_full_sampling_no_regularization(self, rng):
        truth = rand_complex(rng, (16, 16))
        model = MeasurementModel.full(truth)
        nb = OffsetSet.square(1, exclude_zero=True)
        f = f_update_fourier(model, random_h(rng, nb, (16, 16)), 0.0, 1.0, nb)
        assert np.linalg.norm(f - truth) <= 1e-10 * np.linalg.norm(truth)

    def test_fixed_point(self, rng):
        truth = rand_complex(rng, (16, 16))
        model = MeasurementModel.full(truth)
        nb = OffsetSet.square(1, exclude_zero=True)
        h = {q: shift_diff(truth, q) for q in nb}
        f = f_update_fourier(model, h, 0.3, 2.0, nb)
        assert np.linalg.norm(f - truth) <= 1e-10 * np.linalg.norm(truth)

    @pytest.mark.parametrize("n", [1, 9])
    def test_euler_lagrange(self, rng, n):
        nb = OffsetSet.square(1, exclude_zero=True)
        for _ in range(5):
            keep = random_mask(rng, (32, 32))
            model = MeasurementModel(keep, np.where(keep, rand_complex(rng, (32, 32)), 0))
            h = random_h(rng, nb, (32, 32))
            lb = 10 ** rng.uniform(-3, 2)
            f = f_update_fourier(model, h, lb, 1.0, nb, patch_count=n)
            assert euler_lagrange_residual(f, model, h, lb, 1.0, nb, n) <= 1e-8

    def test_unsampled_dc_is_zeroed(self, rng):
        keep = random_mask(rng, (16, 16))
        keep[0, 0] = False
        model = MeasurementModel(keep, np.where(keep, rand_complex(rng, (16, 16)), 0))
        nb = OffsetSet.square(1, exclude_zero=True)
        f = f_update_fourier(model, random_h(rng, nb, (16, 16)), 0.1, 1.0, nb)
        assert np.all(np.isfinite(f))
        assert abs(dft(f)[0, 0]) < 1e-9

    def test_grid_mismatch(self, rng):
        model = MeasurementModel(np.ones((8, 8), bool), np.zeros((8, 8)))
        nb = OffsetSet([(1, 0)])
        with pytest.raises(InvalidModel):
            f_update_fourier(model, np.zeros((1, 6, 6)), 1.0, 1.0, nb)


class TestCgUpdate:
    def test_agrees_with_fourier(self, rng):
        nb = OffsetSet.square(1, exclude_zero=True)
        keep = random_mask(rng, (24, 24))
        model = MeasurementModel(keep, np.where(keep, rand_complex(rng, (24, 24)), 0))
        h = random_h(rng, nb, (24, 24))
        exact = f_update_fourier(model, h, 0.5, 1.0, nb)
        cg = f_update_cg(MaskedFourierOperator(keep), model.operator_data(), h, 0.5, 1.0, nb,
                         np.zeros((24, 24), complex), cg_iters=50, cg_tol=1e-14)
        assert np.linalg.norm(cg - exact) <= 1e-6 * np.linalg.norm(exact)

    def test_identity_operator_closed_form(self, rng):
        nb = OffsetSet.square(1, exclude_zero=True)
        g = rand_complex(rng, (16, 16))
        h = random_h(rng, nb, (16, 16))
        lb = 0.7
        cg = f_update_cg(IdentityOperator((16, 16)), g, h, lb, 1.0, nb, np.zeros_like(g), 50, 1e-14)
        closed = f_update_fourier(MeasurementModel.full(g), h, lb, 1.0, nb)
        assert np.linalg.norm(cg - closed) <= 1e-8 * np.linalg.norm(closed)

    def test_warm_start_at_solution(self, rng):
        nb = OffsetSet([(1, 0), (0, 1)])
        keep = random_mask(rng, (12, 12))
        model = MeasurementModel(keep, np.where(keep, rand_complex(rng, (12, 12)), 0))
        h = random_h(rng, nb, (12, 12))
        x0 = f_update_cg(model.operator(), model.operator_data(), h, 1.0, 1.0, nb,
                         np.zeros((12, 12), complex), 200, 1e-15)
        x1 = f_update_cg(model.operator(), model.operator_data(), h, 1.0, 1.0, nb, x0, 5, 1e-6)
        assert np.array_equal(x0, x1)


class TestObjectives:
    def test_ground_truth_zero_cost(self, rng):
        truth = rand_complex(rng, (8, 8))
        assert eval_cost(truth, MeasurementModel.full(truth), KINDS[0], 0.0, PatchGeometry.square()) <= 1e-20

    def test_constant_image(self):
        f = np.full((8, 8), 2.0 + 0j)
        model = MeasurementModel.full(f)
        geom = PatchGeometry.square()
        spec = PenaltySpec("lp_thresholded")
        assert eval_cost(f, model, spec, 1.0, geom) == 0.0
        hat = eval_cost(f, model, spec, 1.0, geom, use_hat=True, beta=2.0)
        c = pen.huber_offset(spec, 2.0)[1]
        assert hat == pytest.approx(-c * 64 * len(geom.neighborhood))

    def test_matches_double_loop(self, rng):
        f = rand_complex(rng, (16, 16))
        keep = random_mask(rng, (16, 16))
        model = MeasurementModel(keep, np.where(keep, rand_complex(rng, (16, 16)), 0))
        geom = PatchGeometry.square(1, 2)
        spec = PenaltySpec("nltv", sigma=1.5)
        P = extract_patches(f, geom.patch)
        total = 0.0
        for dx, dy in geom.neighborhood:
            for y in range(16):
                for x in range(16):
                    d = np.linalg.norm(P[y, x] - P[(y + dy) % 16, (x + dx) % 16])
                    total += pen.phi(d, spec)
        misfit = np.sum(np.abs(keep * np.fft.fft2(f, norm="ortho") - model.operator_data()) ** 2)
        expect = misfit + 0.3 * total
        assert eval_cost(f, model, spec, 0.3, geom) == pytest.approx(expect, rel=1e-8)

    def test_pixel_form_trivial(self, rng):
        f = rand_complex(rng, (6, 6))
        nb = OffsetSet.square(1, exclude_zero=True)
        h = {q: shift_diff(f, q) for q in nb}
        assert pixel_form_objective(f, h, nb) <= 1e-20
        h2 = random_h(rng, nb, (6, 6))
        zero = np.zeros((6, 6), complex)
        assert pixel_form_objective(zero, 2 * h2, nb) == pytest.approx(4 * pixel_form_objective(zero, h2, nb))

    def test_patch_and_pixel_forms_differ_by_constant(self, rng):
        geom = PatchGeometry(OffsetSet.square(1), OffsetSet([(1, 0), (-2, 1), (0, 2)]))
        n = geom.patch_count
        s = rng.standard_normal((3, 16, 16, n)) + 1j * rng.standard_normal((3, 16, 16, n))
        h = h_from_patches(s, geom)
        f1, f2 = rand_complex(rng, (16, 16)), rand_complex(rng, (16, 16))
        dp = patch_form_objective(f1, s, geom) - patch_form_objective(f2, s, geom)
        dq = pixel_form_objective(f1, h, geom.neighborhood, n) - pixel_form_objective(f2, h, geom.neighborhood, n)
        assert abs(dp - dq) <= 1e-8 * abs(dp)


class TestConfig:
    def test_defaults(self):
        cfg = SolverConfig(lam=1e-3, penalty=KINDS[0])
        assert (cfg.beta_init, cfg.beta_incfactor, cfg.inner_iters, cfg.outer_iters) == (0.01, 2.0, 20, 35)
        assert cfg.geometry == PatchGeometry.square(1, 1)

    @pytest.mark.parametrize(
        "kw",
        [dict(lam=-1), dict(beta_init=0), dict(inner_iters=0), dict(T_decfactor=1.5),
         dict(f_update="newton"), dict(beta_init=1e300, outer_iters=100)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**{"lam": 1e-3, "penalty": KINDS[0], **kw})

    def test_schedule(self):
        cfg = SolverConfig(lam=1.0, penalty=PenaltySpec("lp_thresholded", T=1.0), T_init=100.0, outer_iters=80)
        sched = list(cfg.schedule())
        assert sched[1][1] == pytest.approx(0.02)
        assert sched[1][2].T == pytest.approx(95.0)
        assert sched[-1][2].T == pytest.approx(5.0)


def small_problem(name="shepp_like", dims=32, fraction=0.3, seed=3):
    ph = make_phantom(name, dims, seed=seed)
    return ph, measure(ph, gen_mask("random", dims, {"fraction": fraction}, seed=seed))


class TestRun:
    @pytest.mark.parametrize("penalty", KINDS, ids=lambda s: s.kind.value)
    def test_full_sampling_recovers_truth(self, penalty):
        ph = make_phantom("piecewise_blocks", 32, seed=2)
        model = measure(ph, gen_mask("full", 32))
        cfg = SolverConfig(lam=1e-4, penalty=penalty, outer_iters=5, inner_iters=5)
        f, trace = run_nls(model, cfg, ph.image)
        assert snr_db(f, ph.image) >= 100

    def test_trace_layout(self):
        ph, model = small_problem()
        cfg = SolverConfig(lam=1e-3, penalty=PenaltySpec("lp_thresholded", T=10.0), T_init=200.0,
                           beta_init=1e-5, outer_iters=3, inner_iters=4)
        _, trace = run_nls(model, cfg, ph.image)
        assert len(trace) == 3 * 5
        assert [r.inner for r in trace.blocks()[1]] == [0, 1, 2, 3, 4]
        assert np.all(np.diff(trace.column("seconds")) >= 0)
        assert np.all(np.isfinite(trace.column("snr_db")))

    def test_surrogate_descent_within_blocks(self):
        ph, model = small_problem()
        for spec, beta0 in [(PenaltySpec("lp_thresholded", T=10.0), 1e-5), (PenaltySpec("h1", sigma=40.0), 1e-4)]:
            cfg = SolverConfig(lam=1e-3, penalty=spec, T_init=200.0, beta_init=beta0,
                               outer_iters=8, inner_iters=6)
            _, trace = run_nls(model, cfg)
            for rows in trace.blocks().values():
                c = np.array([r.cost_hat for r in rows])
                assert np.all(c[1:] <= c[:-1] * (1 + 1e-9))

    def test_cg_mode_close_to_analytic(self):
        ph, model = small_problem(dims=16)
        base = SolverConfig(lam=1e-3, penalty=PenaltySpec("l1"), outer_iters=3, inner_iters=3)
        fa, _ = run_nls(model, base)
        fc, _ = run_nls(model, base.replace(f_update="preconditioned_cg", cg_iters=30, cg_tol=1e-12))
        assert np.linalg.norm(fa - fc) <= 1e-6 * np.linalg.norm(fa)

    def test_cg_mode_general_operator(self, rng):
        truth = rand_complex(rng, (12, 12))
        model = OperatorModel(IdentityOperator((12, 12)), truth)
        cfg = SolverConfig(lam=1e-6, penalty=PenaltySpec("l1"), f_update="preconditioned_cg",
                           outer_iters=2, inner_iters=2)
        f, _ = run_nls(model, cfg)
        assert np.linalg.norm(f - truth) <= 1e-4 * np.linalg.norm(truth)
        with pytest.raises(InvalidModel):
            run_nls(model, cfg.replace(f_update="analytic_fourier"))

    def test_piecewise_gain_over_zero_filled(self):
        # 8-pixel tiles leave most 3x3 patch pairs straddling an edge, so single-pixel patches are used
        ph = make_phantom("piecewise_blocks", 64, seed=1)
        model = measure(ph, gen_mask("random", 64, {"R": 5}, seed=1))
        cfg = SolverConfig(lam=1e-3, penalty=PenaltySpec("lp_thresholded", T=10.0), T_init=1000.0,
                           beta_init=1e-5, geometry=PatchGeometry.square(0, 1))
        f, _ = run_nls(model, cfg)
        assert snr_db(f, ph.image) >= snr_db(model.zero_filled(), ph.image) + 5

    def test_divergence_guard(self):
        ph, model = small_problem(dims=16)
        # a fast-shrinking h1 width pushes every metric value towards 1 between blocks;
        # beta * sigma^2 >= 1 keeps the dead zone empty so the surrogate equals the metric
        cfg = SolverConfig(lam=1e3, penalty=PenaltySpec("h1", sigma=1e4), beta_init=1e-6, beta_incfactor=1.0,
                           sigma_decfactor=0.01, outer_iters=4, inner_iters=1, divergence_factor=2.0)
        with pytest.raises(Diverged, match="outer iteration"):
            run_nls(model, cfg)
        run_nls(model, cfg.replace(divergence_factor=math.inf))

    def test_trace_csv_round_trip(self, tmp_path):
        ph, model = small_problem(dims=16)
        cfg = SolverConfig(lam=1e-3, penalty=PenaltySpec("l1"), outer_iters=2, inner_iters=2)
        _, trace = run_nls(model, cfg, ph.image)
        trace.to_csv(tmp_path / "t.csv")
        back = SolverTrace.from_csv(tmp_path / "t.csv")
        assert back.records == trace.records
