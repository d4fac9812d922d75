from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irpatch.harness.metrics import asr, compute_ap, iou


def test_asr():
    assert asr([True, False, True, True]) == 0.75
    assert asr([]) == 0.0


def test_iou():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1 / 7)
    assert iou((0, 0, 2, 2), (5, 5, 1, 1)) == 0.0


def test_ap_examples():
    assert compute_ap([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert compute_ap([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    # ranks: FP, FP, TP, TP -> envelope precision 1/2 at both recalls
    assert compute_ap([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.5
    # reversed separable set with more negatives than positives
    assert compute_ap([0.1, 0.2, 0.7, 0.8, 0.9], [1, 1, 0, 0, 0]) == pytest.approx(0.4)
    assert compute_ap([0.4, 0.2], [0, 0]) is None
    assert compute_ap([], [], n_positives=3) == 0.0


def test_ap_hand_computed():
    # ranks: TP, FP, TP -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    assert compute_ap([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)
    # missed objects cap recall
    assert compute_ap([0.9], [1], n_positives=4) == 0.25


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30))
def test_ap_in_unit_interval_and_order_invariant(pairs):
    scores, labels = zip(*pairs)
    ap = compute_ap(scores, labels)
    if not any(labels):
        assert ap is None
        return
    assert 0.0 <= ap <= 1.0
    perm = np.random.default_rng(0).permutation(len(pairs))
    assert compute_ap(np.array(scores)[perm], np.array(labels)[perm]) == pytest.approx(ap, abs=1e-12)
