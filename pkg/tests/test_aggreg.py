from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from irpatch.aggreg import (
    RING_EDGES,
    aggregation_map,
    aggregation_map_literal,
    aggregation_oracle,
    decay_matrix,
    loss_agg,
    shift,
)
from irpatch.errors import PreconditionError
from irpatch.imgcore import AGG_KERNEL

from conftest import central_diff, rel_err


def test_ring_has_twelve_edges_and_kernel_counts_them():
    assert len(RING_EDGES) == 12
    degree = np.zeros((3, 3))
    for p, q in RING_EDGES:
        degree[1 + p[0], 1 + p[1]] += 1
        degree[1 + q[0], 1 + q[1]] += 1
    assert np.array_equal(degree, AGG_KERNEL)


def test_decay_matrix_examples():
    assert np.array_equal(decay_matrix(np.ones((3, 3))), np.ones((3, 3)) - _centre())
    assert np.array_equal(decay_matrix(np.zeros((3, 3))), np.zeros((3, 3)))
    w = np.zeros((3, 3))
    w[0, 0] = 1.0
    assert decay_matrix(w)[0, 0] == 0.0
    # edge centre with all four ring neighbours on and itself at 0.5
    w = np.ones((3, 3))
    w[0, 1] = 0.5
    assert decay_matrix(w)[0, 1] == 0.5


def _centre():
    c = np.zeros((3, 3))
    c[1, 1] = 1.0
    return c


def test_aggregation_map_examples():
    ones = np.ones((5, 5))
    assert aggregation_map(ones).c[2, 2] == pytest.approx(3 / 7, abs=1e-15)
    single = np.zeros((5, 5))
    single[2, 2] = 1
    assert aggregation_map(single).c[2, 2] == 0
    block = np.zeros((6, 6))
    block[2:4, 2:4] = 1
    c = aggregation_map(block).c
    assert np.allclose(c[2:4, 2:4], 3 / 28, atol=1e-15)


def test_oracle_examples():
    m = np.zeros((3, 3))
    m[0, 0] = m[0, 1] = 1
    assert aggregation_oracle(m, (1, 1)) == Fraction(1, 28)
    m = np.zeros((3, 3))
    m[0, 0] = m[2, 2] = 1
    assert aggregation_oracle(m, (1, 1)) == 0
    assert aggregation_oracle(np.ones((3, 3)), (1, 1)) == Fraction(3, 7)
    with pytest.raises(PreconditionError):
        aggregation_oracle(np.full((3, 3), 0.5), (1, 1))


@settings(max_examples=40)
@given(arrays(np.bool_, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_fast_map_equals_oracle_and_literal(b):
    m = b.astype(float)
    fast = aggregation_map(m).c
    lit = aggregation_map_literal(m).c
    oracle = np.array(
        [[float(aggregation_oracle(m, (r, c))) for c in range(m.shape[1])] for r in range(m.shape[0])]
    )
    assert np.allclose(fast, oracle, atol=1e-12, rtol=0)
    assert np.allclose(lit, oracle, atol=1e-12, rtol=0)


@settings(max_examples=40)
@given(arrays(np.float64, (6, 7), elements=st.floats(0, 1)))
def test_literal_route_matches_fast_route_on_continuous_masks(m):
    assert np.allclose(aggregation_map(m).c, aggregation_map_literal(m).c, atol=1e-12, rtol=0)


@given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)))
def test_coefficients_bounded(m):
    c = aggregation_map(m).c
    assert c.min() >= 0 and c.max() <= 3 / 7 + 1e-15


def test_summaries():
    m = np.zeros((4, 4))
    m[1:3, 1:3] = 1
    support = np.zeros((4, 4), bool)
    support[:2, :] = True
    amap = aggregation_map(m, support)
    cm = amap.c * m
    assert amap.mean_literal == pytest.approx(cm.sum() / 16, abs=1e-15)
    assert amap.mean_support == pytest.approx(cm[:2].mean(), abs=1e-15)
    assert aggregation_map(m).mean_support == amap.mean_literal


@pytest.mark.parametrize("n", [2, 3, 4])
def test_solid_square_beats_scattered_pixels(n):
    solid = np.zeros((16, 16))
    solid[4 : 4 + n, 4 : 4 + n] = 1
    scattered = np.zeros((16, 16))
    coords = [(r, c) for r in range(0, 16, 2) for c in range(0, 16, 2)][: n * n]
    for r, c in coords:
        scattered[r, c] = 1
    assert aggregation_map(scattered).mean_support == 0
    assert aggregation_map(solid).mean_support > 0


def test_loss_agg_values():
    value, grad = loss_agg(np.zeros((5, 5)))
    assert value == 0 and not grad.any()
    for n in (4, 8, 32):
        value, _ = loss_agg(np.ones((n, n)))
        assert -3 / 7 < value < 0
    assert loss_agg(np.ones((32, 32)))[0] < loss_agg(np.ones((8, 8)))[0]
    m = np.random.default_rng(1).uniform(size=(6, 6))
    assert loss_agg(m)[0] == pytest.approx(-aggregation_map(m).mean_literal, abs=1e-15)


def test_loss_agg_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(5):
        m = rng.uniform(size=(16, 16))
        _, g = loss_agg(m)
        fd = central_diff(lambda a: loss_agg(a)[0], m, h=1e-4)
        assert rel_err(g, fd) <= 1e-4


def test_shift_zero_fills():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(shift(a, (1, 0)), [[3, 4, 5], [6, 7, 8], [0, 0, 0]])
    assert np.array_equal(shift(a, (0, -1)), [[0, 0, 1], [0, 3, 4], [0, 6, 7]])
    assert not shift(a, (3, 0)).any()
