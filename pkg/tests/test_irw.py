import numpy as np
import pytest

from nlshrink.grid import OffsetSet, PatchGeometry
from nlshrink.harness import measure
from nlshrink.irw import (
    IrwConfig,
    irw_step,
    irw_weights,
    irw_weights_bruteforce,
    run_irw,
    true_cost,
    weight_from_distance,
    weighted_quadratic,
)
from nlshrink.masks import gen_mask
from nlshrink.metrics import snr_db
from nlshrink.operators import MeasurementModel
from nlshrink.penalties import PenaltySpec
from nlshrink.phantoms import make_phantom

from conftest import rand_complex

GEOM = PatchGeometry(OffsetSet.square(1), OffsetSet.square(2, exclude_zero=True))


@pytest.mark.parametrize(
    "penalty",
    [PenaltySpec("lp_thresholded", T=3.0), PenaltySpec("lp"), PenaltySpec("l1"), PenaltySpec("h1", sigma=2.0),
     PenaltySpec("peyre", sigma=2.0), PenaltySpec("nltv", sigma=2.0)],
    ids=lambda s: s.kind.value,
)
def test_weights_match_patch_loop(rng, penalty):
    f = rand_complex(rng, (16, 16))
    fast = irw_weights(f, GEOM, penalty, 1e-3)
    slow = irw_weights_bruteforce(f, GEOM, penalty, 1e-3)
    assert np.max(np.abs(fast - slow)) <= 1e-10
    assert np.all(fast >= 0)


def test_h1_limit_on_constant_image():
    w = irw_weights(np.full((8, 8), 1 + 1j), GEOM, PenaltySpec("h1", sigma=0.5))
    np.testing.assert_allclose(w, 1 / (2 * 0.25))


def test_saturated_pairs_have_zero_weight():
    d = np.array([0.5, 0.99, 1.0, 4.0])
    w = weight_from_distance(d, PenaltySpec("lp_thresholded", T=1.0), 1e-3)
    assert np.all(w[:2] > 0) and np.all(w[2:] == 0)


def test_zero_floor_gives_inf_for_singular_metrics():
    assert np.isinf(weight_from_distance(np.array([0.0]), PenaltySpec("l1"), 0.0)[0])
    with pytest.raises(ValueError, match="weight_floor"):
        irw_step(np.zeros((4, 4), complex), MeasurementModel.full(np.ones((4, 4))),
                 np.full((8, 4, 4), np.inf), 1.0, PatchGeometry.square())


def test_zero_weights_full_sampling(rng):
    truth = rand_complex(rng, (12, 12))
    model = MeasurementModel.full(truth)
    geom = PatchGeometry.square()
    f = irw_step(np.zeros_like(truth), model, np.zeros((8, 12, 12)), 1.0, geom)
    assert np.linalg.norm(f - truth) <= 1e-8 * np.linalg.norm(truth)


def test_cg_decreases_quadratic(rng):
    ph = make_phantom("shepp_like", 32)
    model = measure(ph, gen_mask("random", 32, {"fraction": 0.3}, seed=2))
    geom = PatchGeometry.square()
    f0 = np.asarray(model.zero_filled())
    w = irw_weights(f0, geom, PenaltySpec("l1"), 1e-2)
    values = []
    irw_step(f0, model, w, 1e-2, geom, cg_iters=25, cg_tol=1e-14,
             callback=lambda it, x: values.append(weighted_quadratic(x, model, w, 1e-2, geom)))
    values = np.array([weighted_quadratic(f0, model, w, 1e-2, geom)] + values)
    assert len(values) > 5
    assert np.all(np.diff(values) <= 1e-9 * values[:-1])


def test_majorize_minimize_descent():
    ph = make_phantom("shepp_like", 32)
    model = measure(ph, gen_mask("random", 32, {"fraction": 0.3}, seed=2))
    cfg = IrwConfig(lam=1e-2, penalty=PenaltySpec("l1"), outer_iters=12, cg_iters=200, cg_tol=1e-13,
                    weight_floor=1e-6)
    _, trace = run_irw(model, cfg)
    c = trace.column("cost_raw")
    assert np.all(np.diff(c) <= 1e-9 * c[:-1])


def test_full_sampling_recovers_truth():
    ph = make_phantom("piecewise_blocks", 32, seed=2)
    model = measure(ph, gen_mask("full", 32))
    f, _ = run_irw(model, IrwConfig(lam=1e-6, penalty=PenaltySpec("l1"), outer_iters=3))
    assert snr_db(f, ph.image) >= 100


def test_trace_schema():
    ph = make_phantom("shepp_like", 16)
    model = measure(ph, gen_mask("random", 16, {"fraction": 0.4}, seed=2))
    cfg = IrwConfig(lam=1e-2, penalty=PenaltySpec("lp_thresholded", T=5.0), outer_iters=4, T_init=50.0,
                    T_decfactor=0.5)
    f, trace = run_irw(model, cfg, ph.image)
    assert [r.outer for r in trace] == [0, 1, 2, 3, 4]
    assert np.all(np.isnan(trace.column("beta")))
    np.testing.assert_array_equal(trace.column("cost_hat"), trace.column("cost_raw"))
    assert trace.column("T")[1:].tolist() == [50.0, 25.0, 12.5, 6.25]
    assert trace.final.cost_raw == pytest.approx(true_cost(f, model, PenaltySpec("lp_thresholded", T=6.25),
                                                           1e-2, cfg.geometry))


def test_config_validation():
    with pytest.raises(ValueError):
        IrwConfig(lam=1.0, penalty=PenaltySpec("l1"), weight_floor=-1)
