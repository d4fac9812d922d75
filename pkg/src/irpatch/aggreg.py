"""Aggregation regularizer built on soft local clustering coefficients.

For a pixel ``i`` the eight neighbours form a ring graph in which two ring
pixels are connected when they are themselves 8-neighbours.  Corners touch
two ring pixels and edge-centres touch four, giving twelve ring edges.  The
soft coefficient of ``i`` is

    C_i = (K * A_i) / 56,   A_i[j] = V_j * mean(V_k for k adjacent to j),

and because ``K[j]`` is exactly the number of ring neighbours of ``j`` this
collapses to ``C_i = (1/28) * sum over ring edges (p, q) of V_p * V_q``.
The edge-product form is what :func:`aggregation_map` and :func:`loss_agg`
evaluate; :func:`aggregation_map_literal` keeps the kernel-and-decay route
for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .errors import PreconditionError
from .imgcore import AGG_KERNEL, is_binary

DENOMINATOR = 56.0  # k * (k - 1) with k = 8 neighbours, used for every pixel

#: (row, col) offsets of the ring, in row-major order.
RING = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]

#: Unordered pairs of ring offsets that are 8-adjacent to each other.
RING_EDGES = [
    (p, q)
    for p, q in combinations(RING, 2)
    if max(abs(p[0] - q[0]), abs(p[1] - q[1])) == 1
]

# ring position index -> indices of adjacent ring positions
_RING_NEIGHBOURS = [
    [k for k, q in enumerate(RING) if q != p and max(abs(p[0] - q[0]), abs(p[1] - q[1])) == 1]
    for p in RING
]


@dataclass(frozen=True)
class AggregationMap:
    """Per-pixel aggregation degrees plus two scalar summaries.

    ``mean_literal`` averages ``C * M`` over the whole grid.
    ``mean_support`` averages it over the support region only (the object
    mask when one is given, otherwise the whole grid).
    """

    c: np.ndarray
    mean_literal: float
    mean_support: float


def shift(a: np.ndarray, d: tuple[int, int]) -> np.ndarray:
    """``out[i] = a[i + d]`` with zeros where ``i + d`` falls off the grid."""
    dr, dc = d
    h, w = a.shape
    out = np.zeros_like(a)
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = a[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    return out


def decay_matrix(window) -> np.ndarray:
    """Decay factors of the eight ring positions of a 3x3 window.

    The centre entry of ``window`` is ignored and the centre of the result
    is 0.
    """
    w = np.asarray(window, dtype=np.float64)
    values = [w[1 + dr, 1 + dc] for dr, dc in RING]
    out = np.zeros((3, 3))
    for j, (dr, dc) in enumerate(RING):
        nbrs = _RING_NEIGHBOURS[j]
        out[1 + dr, 1 + dc] = values[j] * sum(values[k] for k in nbrs) / len(nbrs)
    return out


def _edge_sum(m: np.ndarray) -> np.ndarray:
    total = np.zeros_like(m)
    shifted = {d: shift(m, d) for d in RING}
    for p, q in RING_EDGES:
        total += shifted[p] * shifted[q]
    return total


def _summaries(c: np.ndarray, m: np.ndarray, support) -> AggregationMap:
    cm = c * m
    mean_literal = float(cm.sum() / cm.size)
    if support is None:
        mean_support = mean_literal
    else:
        s = np.asarray(support, dtype=bool)
        mean_support = float(cm[s].mean()) if s.any() else 0.0
    return AggregationMap(c=c, mean_literal=mean_literal, mean_support=mean_support)


def aggregation_map(m, support=None) -> AggregationMap:
    """Soft local clustering coefficient of every pixel (zero padded)."""
    m = np.asarray(m, dtype=np.float64)
    c = 2.0 * _edge_sum(m) / DENOMINATOR
    return _summaries(c, m, support)


def aggregation_map_literal(m, support=None) -> AggregationMap:
    """Slow per-pixel route: build the decay matrix, then apply the kernel."""
    m = np.asarray(m, dtype=np.float64)
    h, w = m.shape
    padded = np.pad(m, 1)
    c = np.empty_like(m)
    for r in range(h):
        for col in range(w):
            a = decay_matrix(padded[r : r + 3, col : col + 3])
            # K is symmetric, so convolution at the centre is a plain dot product
            c[r, col] = float((AGG_KERNEL * a).sum()) / DENOMINATOR
    return _summaries(c, m, support)


def aggregation_oracle(m, pixel) -> Fraction:
    """Exact clustering coefficient of ``pixel`` in a binary mask.

    Enumerates every pair of on-pixels among the eight neighbours and counts
    the pairs that touch each other, then divides twice that count by 56.
    """
    m = np.asarray(m)
    if not is_binary(m):
        raise PreconditionError("aggregation_oracle needs a binary mask")
    h, w = m.shape
    r0, c0 = pixel
    on = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == dc == 0:
                continue
            r, c = r0 + dr, c0 + dc
            if 0 <= r < h and 0 <= c < w and m[r, c] == 1:
                on.append((r, c))
    edges = sum(
        1 for a, b in combinations(on, 2) if max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
    )
    return Fraction(2 * edges, 56)


def loss_agg(m) -> tuple[float, np.ndarray]:
    """Negative mean of ``C * M`` and its exact gradient.

    The loss is a cubic polynomial in the mask,
    ``-(1/(28 h w)) * sum_i sum_{(p,q)} M_i M_{i+p} M_{i+q}``,
    so each of the three factors contributes a term to the gradient.
    """
    m = np.asarray(m, dtype=np.float64)
    scale = 1.0 / (28.0 * m.size)
    shifted = {d: shift(m, d) for d in RING}
    value = 0.0
    grad = np.zeros_like(m)
    for p, q in RING_EDGES:
        sp, sq = shifted[p], shifted[q]
        pq = sp * sq
        value += float((m * pq).sum())
        grad += pq
        grad += shift(m * sq, (-p[0], -p[1]))
        grad += shift(m * sp, (-q[0], -q[1]))
    return -scale * value, -scale * grad
