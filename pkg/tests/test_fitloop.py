import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsa.errors import ConfigurationError, DimensionError, DivergenceError, DomainError, NumericError
from dsa.fitloop import (
    FitConfig,
    bukin_target,
    chamfer_distance,
    chamfer_report,
    fit_surface,
    gradient_check,
    init_surface,
    laplacian_regularizer,
    mse_loss,
    project_knots,
)
from dsa.nurbs import KnotVector, eval_surface_grid, random_surface
from oracles import central_diff_jacobian, rel_err


def brute_chamfer(P, Q):
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    total = 0.0
    for p in P:
        total += min(math.dist(p, q) for q in Q)
    for q in Q:
        total += min(math.dist(p, q) for p in P)
    return total


def test_mse_examples():
    loss, grad = mse_loss(np.ones((2, 3, 3)), np.ones((2, 3, 3)))
    assert loss == 0 and not np.any(grad)
    loss, grad = mse_loss([1.0, 2.0], [1.0, 4.0])
    assert loss == 2.0
    np.testing.assert_allclose(grad, [0.0, -2.0])
    with pytest.raises(DimensionError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_mse_gradient_fd(rng):
    pred, target = rng.normal(size=(2, 4, 5, 3))
    _, grad = mse_loss(pred, target)
    fd = central_diff_jacobian(lambda p: mse_loss(p, target)[0], pred, 1e-6)
    assert rel_err(grad, fd) <= 1e-8


def test_chamfer_examples():
    pts = np.random.default_rng(0).normal(size=(7, 3))
    assert chamfer_distance(pts, pts) == 0
    assert chamfer_distance([(0, 0)], [(3, 4)]) == pytest.approx(10.0, abs=1e-15)
    assert chamfer_report([(0, 0)], [(3, 4)]) == pytest.approx(1000.0)
    with pytest.raises(DomainError):
        chamfer_distance(np.zeros((0, 3)), pts)


def test_chamfer_matches_brute_force(rng):
    for _ in range(20):
        P = rng.normal(size=(int(rng.integers(1, 9)), 3))
        Q = rng.normal(size=(int(rng.integers(1, 9)), 3))
        assert abs(chamfer_distance(P, Q) - brute_chamfer(P, Q)) <= 1e-12
        assert chamfer_distance(P, Q) == chamfer_distance(Q, P)
        sq = sum(min(np.sum((p - q) ** 2) for q in Q) for p in P) + sum(
            min(np.sum((p - q) ** 2) for p in P) for q in Q
        )
        assert chamfer_distance(P, Q, squared=True) == pytest.approx(sq, abs=1e-12)


def test_laplacian_examples():
    u, v = np.meshgrid(np.arange(4.0), np.arange(5.0), indexing="ij")
    plane = np.stack([u, v, 2 * u - 3 * v + 1], axis=-1)
    assert laplacian_regularizer(plane)[0] == pytest.approx(0, abs=1e-20)
    bump3 = np.zeros((3, 3))
    bump3[1, 1] = 1
    assert laplacian_regularizer(bump3)[0] == 16  # single interior point
    bump5 = np.zeros((5, 5))
    bump5[2, 2] = 1
    assert laplacian_regularizer(bump5)[0] == 20  # center 4^2 + four neighbours 1^2
    with pytest.raises(DimensionError):
        laplacian_regularizer(np.zeros((2, 5, 3)))


def test_laplacian_gradient_fd(rng):
    ctrl = rng.normal(size=(5, 4, 3))
    _, grad = laplacian_regularizer(ctrl)
    fd = central_diff_jacobian(lambda c: laplacian_regularizer(c)[0], ctrl, 1e-6)
    assert rel_err(grad, fd) <= 1e-7


def test_bukin_target():
    T = bukin_target(11, 7)
    assert T.shape == (11, 7, 3)
    assert T[0, 0, 0] == -15 and T[-1, -1, 0] == -5 and T[0, 0, 1] == -3 and T[-1, -1, 1] == 3
    assert T[-1, 0, 2] == pytest.approx(100 * math.sqrt(3.25) + 0.05, abs=1e-12)
    T = bukin_target(11, 13)  # x = -10 at i=5, y = 1 at j=8
    assert T[5, 8, 0] == -10 and T[5, 8, 1] == pytest.approx(1.0)
    assert T[5, 8, 2] == pytest.approx(0.0, abs=1e-6)


def test_fit_zero_iterations_returns_init():
    T = bukin_target(8, 8)
    init = init_surface(T, 5, 5, 3, seed=3)
    rep = fit_surface(T, init, FitConfig(iterations=0))
    np.testing.assert_allclose(rep.surface.ctrl, init.ctrl, rtol=1e-15, atol=1e-13)
    assert len(rep.history) == 1
    S, _ = eval_surface_grid(init, 8, 8)
    assert rep.history[0] == pytest.approx(mse_loss(S, T)[0], rel=1e-12)


def test_plain_gd_monotone(rng):
    true = random_surface(rng, 5, 5, 3, 3, rational=False)
    T, _ = eval_surface_grid(true, 12, 12)
    init = true.replace(ctrl=true.ctrl + rng.normal(scale=0.3, size=true.ctrl.shape))
    cfg = FitConfig(optimizer="plain-gd", lr=0.5, iterations=200, normalize=False)
    hist = fit_surface(T, init, cfg).history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < hist[0]


def test_history_length_and_determinism():
    T = bukin_target(10, 10)
    init = init_surface(T, 5, 5, 3, seed=1)
    cfg = FitConfig(iterations=25, reparameterize_knots=True)
    a = fit_surface(T, init, cfg)
    b = fit_surface(T, init, cfg)
    assert len(a.history) == 26
    assert a.history == b.history
    np.testing.assert_array_equal(a.surface.ctrl, b.surface.ctrl)
    np.testing.assert_array_equal(a.surface.knots_v.knots, b.surface.knots_v.knots)


@pytest.mark.parametrize("mode", ["literal", "gaussian", "recursive"])
def test_knots_stay_valid_when_reparameterizing(mode):
    T = bukin_target(12, 12)
    init = init_surface(T, 6, 6, 3, seed=2)
    cfg = FitConfig(iterations=30, reparameterize_knots=True, knot_grad=mode, lr_knots=0.05)
    for kv in (fit_surface(T, init, cfg).surface.knots_u, fit_surface(T, init, cfg).surface.knots_v):
        k = kv.knots
        assert np.all(np.diff(k) >= 0)
        assert np.all(k[:4] == 0) and np.all(k[-4:] == 1)
        assert np.min(np.diff(k[3:-3])) >= cfg.knot_margin - 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    T = bukin_target(8, 8)
    init = init_surface(T, 4, 4, 3, seed=0)
    cfg = FitConfig(optimizer="plain-gd", lr=1e6, iterations=500, normalize=False)
    with pytest.raises(DivergenceError) as info:
        fit_surface(T, init, cfg)
    assert info.value.iteration is not None


def test_laplacian_term_reduces_roughness():
    T = bukin_target(16, 16)
    init = init_surface(T, 6, 6, 3, seed=0)
    plain = fit_surface(T, init, FitConfig(iterations=200))
    smooth = fit_surface(T, init, FitConfig(iterations=200, laplacian_weight=1.0))
    assert laplacian_regularizer(smooth.surface.ctrl)[0] < laplacian_regularizer(plain.surface.ctrl)[0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.5, 1.5), min_size=1, max_size=8), st.sampled_from([0.0, 1e-4, 0.05]))
def test_project_knots_valid(inner, margin):
    d = 2
    raw = np.concatenate([np.zeros(d + 1), inner, np.ones(d + 1)])
    kv = KnotVector(d, np.concatenate([np.zeros(d + 1), np.sort(np.clip(inner, 0, 1)), np.ones(d + 1)]))
    if (len(inner) + 1) * margin > 1:
        with pytest.raises(ConfigurationError):
            project_knots(kv, margin)
        return
    from dsa.fitloop import _project_array

    out = _project_array(raw, d, margin)
    assert np.all(out[: d + 1] == 0) and np.all(out[-d - 1 :] == 1)
    assert np.min(np.diff(out[d:-d])) >= margin - 1e-12


def test_gradient_check_examples():
    assert gradient_check(lambda x: (float(x[0] ** 2), 2 * x), [3.0]) <= 1e-9
    assert gradient_check(lambda x: (0.0, np.zeros_like(x)), np.ones(4)) == 0.0
    with pytest.raises(NumericError):
        gradient_check(lambda x: (math.nan, x), [1.0])
    with pytest.raises(ConfigurationError):
        gradient_check(lambda x: (0.0, x), [1.0], step=0)


def test_gradient_check_mse_through_nurbs(rng):
    from dsa.nurbs import backward_surface

    surf = random_surface(rng, 5, 5, 3, 3)
    T = rng.normal(size=(9, 9, 3))

    def fun(ctrl):
        S, cache = eval_surface_grid(surf.replace(ctrl=ctrl), 9, 9)
        loss, up = mse_loss(S, T)
        return loss, backward_surface(surf.replace(ctrl=ctrl), cache, up).d_ctrl

    assert gradient_check(fun, surf.ctrl, 1e-6) <= 1e-5


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FitConfig(lr=0)
    with pytest.raises(ConfigurationError):
        FitConfig(sigma=-1)
    with pytest.raises(ConfigurationError):
        FitConfig.from_dict({"learning_rate": 1})
    assert FitConfig.from_dict({"lr": 0.5}).lr == 0.5
