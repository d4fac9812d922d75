from __future__ import annotations

import numpy as np
import pytest

from irpatch.errors import ParameterError
from irpatch.imgcore import compose_adversarial, gaussian_kernel
from irpatch.optim import (
    BUDGET_EXCEEDED,
    CONVERGED,
    MAX_ITERS,
    OptimConfig,
    finetune_gradient,
    initial_mask,
    loss_terms,
    mask_update,
    momentum_step,
    reference_step,
    run,
    total_loss,
    trace_masks,
)
from irpatch.victim import TemplateDetector, loss_attack

from conftest import central_diff, rel_err


def small_problem(seed=0):
    rng = np.random.default_rng(seed)
    det = TemplateDetector(rng.normal(size=(4, 4)), bias=0.3, stride=2)
    x = rng.uniform(0.2, 0.9, size=(8, 8))
    obj = np.zeros((8, 8))
    obj[1:7, 2:7] = 1
    return det, x, obj


@pytest.mark.parametrize(
    "bad",
    [
        {"lambda1": -1},
        {"epsilon_step": 0},
        {"T": 0},
        {"T": 2.5},
        {"s_thr": 0},
        {"epsilon_max": -1},
        {"gauss_size": 4},
        {"gauss_sigma": 0},
        {"v_thre": 1.0},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ParameterError):
        OptimConfig(**bad)


def test_budget():
    obj = np.ones((4, 5))
    assert OptimConfig().budget(obj) == pytest.approx(3.0)
    assert OptimConfig(epsilon_max=7.0).budget(obj) == 7.0


def test_weight_collapse_and_zero_mask():
    det, x, obj = small_problem()
    m = np.random.default_rng(1).uniform(size=x.shape)
    cfg = OptimConfig(lambda1=0, lambda2=0)
    total, _ = total_loss(det, x, 0.2, m, cfg)
    assert total == loss_attack(det, compose_adversarial(x, 0.2, m))[0]
    total, _ = total_loss(det, x, 0.2, np.zeros_like(x), OptimConfig())
    assert total == loss_attack(det, x)[0]


def test_total_gradient_matches_finite_differences():
    for seed in range(3):
        det, x, _ = small_problem(seed)
        m = np.random.default_rng(seed + 10).uniform(0.05, 0.95, size=x.shape)
        m[np.abs(m - 0.5) < 1e-3] += 0.01
        cfg = OptimConfig(lambda1=0.3, lambda2=4.0, alpha=20.0)
        _, g = total_loss(det, x, 0.2, m, cfg)
        fd = central_diff(lambda a: total_loss(det, x, 0.2, a, cfg)[0], m, h=1e-6)
        assert rel_err(g, fd) <= 1e-3


def test_loss_terms_report_components():
    det, x, _ = small_problem()
    m = np.full(x.shape, 0.7)
    t = loss_terms(det, x, 0.2, m, OptimConfig(lambda1=0.5, lambda2=2.0))
    assert t.total == pytest.approx(t.attack + 0.5 * t.binary + 2.0 * t.agg)


def test_momentum_examples():
    grad = np.array([[1.0, -1.0], [2.0, 0.0]])
    assert np.array_equal(momentum_step(np.zeros((2, 2)), grad, 0.9), grad / 4)
    g_prev = np.full((2, 2), 0.3)
    assert np.array_equal(momentum_step(g_prev, np.zeros((2, 2)), 0.9), 0.9 * g_prev)
    out = momentum_step(np.full((4, 4), 0.1), np.ones((4, 4)), 0.9)
    assert np.allclose(out, 0.1525, atol=1e-15)


def test_finetune_examples():
    g = np.random.default_rng(0).normal(size=(12, 12))
    k = gaussian_kernel(5, 1.0)
    assert np.array_equal(finetune_gradient(g, np.full((12, 12), 0.4), k), g)
    block = np.zeros((12, 12))
    block[4:8, 4:8] = 1
    out = finetune_gradient(g, block, k)
    halo = np.zeros((12, 12), bool)
    halo[2:10, 2:10] = True
    assert not out[~halo].any()
    assert out[halo].any()
    assert not finetune_gradient(np.zeros((12, 12)), block, k).any()


def test_mask_update_examples():
    m = np.full((2, 2), 0.1)
    obj = np.array([[1.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(mask_update(m, np.zeros((2, 2)), 1.0, obj), m * obj)
    out = mask_update(m, np.full((2, 2), 0.5), 1.0, obj)
    assert np.all(out == 0)
    out = mask_update(m, np.full((2, 2), -5.0), 1.0, obj)
    assert out[0, 0] == 1.0 and out[1, 1] == 0.0


def test_initial_mask_is_seeded_and_projected():
    obj = np.zeros((5, 5))
    obj[1:4, 1:4] = 1
    a, b = initial_mask(obj, 3), initial_mask(obj, 3)
    assert np.array_equal(a, b)
    assert not a[obj == 0].any() and a.max() <= 1


def test_trivial_thresholds_stop_after_one_iteration():
    det, x, obj = small_problem()
    m, _, state = run(det, x, 0.2, obj, OptimConfig(s_thr=1.0, epsilon_max=x.size))
    assert state.t == 1 and state.stop_reason == CONVERGED and len(state.history) == 1


def test_stop_needs_both_conditions():
    det, x, obj = small_problem()
    # score condition holds, budget never does
    _, _, state = run(det, x, 0.2, obj, OptimConfig(T=5, s_thr=1.0, epsilon_max=1e-9, lambda1=0, lambda2=0))
    assert state.stop_reason == BUDGET_EXCEEDED and state.t == 5
    # budget holds, score never does
    _, _, state = run(det, x, 0.2, obj, OptimConfig(T=5, s_thr=1e-12, epsilon_max=x.size))
    assert state.stop_reason == MAX_ITERS and state.t == 5


def test_run_invariants_and_determinism():
    det, x, obj = small_problem()
    cfg = OptimConfig(T=30, s_thr=1e-12, epsilon_step=0.5)
    m1, xa1, s1 = run(det, x, 0.2, obj, cfg, snapshot_every=5)
    m2, xa2, s2 = run(det, x, 0.2, obj, cfg, snapshot_every=5)
    assert s1.history == s2.history and np.array_equal(m1, m2) and np.array_equal(xa1, xa2)
    assert len(s1.history) == s1.t == 30
    for _, snap in s1.snapshots:
        assert snap.min() >= 0 and snap.max() <= 1
        assert not snap[obj == 0].any()
    assert np.array_equal(xa1, compose_adversarial(x, 0.2, m1))


def test_memoryless_run_matches_reference_step():
    det, x, obj = small_problem()
    cfg = OptimConfig(mu=0.0, T=1, s_thr=1e-12, epsilon_step=0.3, lambda1=0.2, lambda2=3.0)
    m0 = initial_mask(obj, cfg.seed)
    expected = m0
    for t in range(1, 6):
        expected = reference_step(det, x, 0.2, expected, obj, cfg)
        m, _, _ = run(det, x, 0.2, obj, cfg.replace(T=t))
        assert np.allclose(m, expected, atol=1e-14, rtol=0)


def test_trace_masks():
    det, x, obj = small_problem()
    cfg = OptimConfig(T=20, s_thr=1e-12)
    _, _, state = run(det, x, 0.2, obj, cfg, snapshot_every=5)
    assert [t for t, _ in trace_masks(state, 10)] == [0, 10, 20]
    assert [t for t, _ in trace_masks(state, 21)] == [0]
    assert all(m.shape == x.shape for _, m in trace_masks(state, 5))
    with pytest.raises(ParameterError):
        trace_masks(state, 7)
    _, _, bare = run(det, x, 0.2, obj, cfg)
    with pytest.raises(ParameterError):
        trace_masks(bare, 5)


def test_empty_object_rejected():
    det, x, _ = small_problem()
    with pytest.raises(ParameterError):
        run(det, x, 0.2, np.zeros_like(x), OptimConfig())


def test_fixture_run_converges(fixture_run, fixture_scene):
    _, obj = fixture_scene
    m, _, state = fixture_run
    assert state.stop_reason == CONVERGED and state.t <= 500
    assert state.history[-1].top1_score <= 0.3
    assert m.sum() <= OptimConfig().budget(obj)


def test_dropping_aggregation_lowers_aggregation_on_suite(detector):
    from irpatch.aggreg import aggregation_map
    from irpatch.harness.fixture import fixture_suite
    from irpatch.patchkit import binarize, make_stencil
    from irpatch.victim import generate_scene

    agg = {"default": [], "no_agg": []}
    comps = {"default": [], "no_agg": []}
    for spec in fixture_suite(6, 0):
        img, obj = generate_scene(spec)
        arms = {"default": OptimConfig(seed=spec.seed), "no_agg": OptimConfig(seed=spec.seed, lambda2=0)}
        for arm, cfg in arms.items():
            m, _, _ = run(detector, np.asarray(img), 0.2, obj, cfg)
            agg[arm].append(aggregation_map(binarize(m), obj > 0).mean_support)
            comps[arm].append(len(make_stencil(m, cfg.v_thre, obj > 0).components))
    assert np.mean(agg["no_agg"]) < np.mean(agg["default"])
    assert np.mean(comps["no_agg"]) > np.mean(comps["default"])
