"""Mask optimization loop.

Each iteration evaluates the total loss at the current mask, folds the
L1-normalized gradient into a momentum buffer, damps it with a smoothed copy
of the previous mask, takes a projected step inside the object region and
re-scores the recomposed image.  The loop stops at the first iterate whose
top-1 score and mask size are both under their limits.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .aggreg import aggregation_map, loss_agg
from .binreg import BinRegConfig, loss_binary
from .errors import ParameterError
from .imgcore import (
    CoverSpec,
    check_same_shape,
    compose_adversarial,
    convolve_same,
    gaussian_kernel,
    minmax_normalize,
)
from .victim import VictimModel, loss_attack

log = logging.getLogger(__name__)

CONVERGED = "converged"
BUDGET_EXCEEDED = "budget_exceeded_at_T"
MAX_ITERS = "max_iters"

HISTORY_COLUMNS = ("l_attack", "l_binary", "l_agg", "top1_score", "mask_l1", "aggregation")


@dataclass(frozen=True)
class OptimConfig:
    lambda1: float = 0.01
    lambda2: float = 85.0
    mu: float = 0.9
    epsilon_step: float = 10.0
    T: int = 1000
    # None means epsilon_max_fraction * ||M_obj||_1
    epsilon_max: float | None = None
    epsilon_max_fraction: float = 0.15
    s_thr: float = 0.3
    gauss_size: int = 5
    gauss_sigma: float = 1.0
    v_thre: float = 0.5
    alpha: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "mu", "alpha"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        if not self.epsilon_step > 0:
            raise ParameterError("epsilon_step must be positive")
        if int(self.T) != self.T or self.T < 1:
            raise ParameterError("T must be an integer >= 1")
        if not 0 < self.s_thr <= 1:
            raise ParameterError("s_thr must lie in (0, 1]")
        if self.epsilon_max is not None and self.epsilon_max <= 0:
            raise ParameterError("epsilon_max must be positive")
        if not self.epsilon_max_fraction > 0:
            raise ParameterError("epsilon_max_fraction must be positive")
        if self.gauss_size < 1 or self.gauss_size % 2 == 0:
            raise ParameterError("gauss_size must be odd and positive")
        if not self.gauss_sigma > 0:
            raise ParameterError("gauss_sigma must be positive")
        BinRegConfig(self.v_thre, self.alpha)

    @property
    def binreg(self) -> BinRegConfig:
        return BinRegConfig(self.v_thre, self.alpha)

    def budget(self, m_obj) -> float:
        if self.epsilon_max is not None:
            return float(self.epsilon_max)
        return self.epsilon_max_fraction * float(np.asarray(m_obj).sum())

    def replace(self, **changes) -> OptimConfig:
        return dataclasses.replace(self, **changes)


class LossTerms(NamedTuple):
    total: float
    grad: np.ndarray
    attack: float
    binary: float
    agg: float


def loss_terms(model: VictimModel, x, cover, m, cfg: OptimConfig) -> LossTerms:
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    check_same_shape(x, m)
    c = cover.value if isinstance(cover, CoverSpec) else float(cover)
    x_adv = compose_adversarial(x, c, m)
    l_att, g_img = loss_attack(model, x_adv)
    # d x_adv / d M = cover - x
    grad = g_img * (c - x)
    l_bin = l_agg = 0.0
    if cfg.lambda1:
        l_bin, g_bin = loss_binary(m, cfg.binreg)
        grad = grad + cfg.lambda1 * g_bin
    if cfg.lambda2:
        l_agg, g_agg = loss_agg(m)
        grad = grad + cfg.lambda2 * g_agg
    total = l_att + cfg.lambda1 * l_bin + cfg.lambda2 * l_agg
    return LossTerms(total, grad, l_att, l_bin, l_agg)


def total_loss(model: VictimModel, x, cover, m, cfg: OptimConfig) -> tuple[float, np.ndarray]:
    terms = loss_terms(model, x, cover, m, cfg)
    return terms.total, terms.grad


def momentum_step(g_prev, grad, mu: float) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    norm = np.abs(grad).sum()
    step = grad / norm if norm > 0 else np.zeros_like(grad)
    return mu * np.asarray(g_prev, dtype=np.float64) + step


def finetune_gradient(g, m_prev, k_gau) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    check_same_shape(g, m_prev)
    # edge replication keeps a constant mask constant, so it leaves g alone
    return g * minmax_normalize(convolve_same(m_prev, k_gau, mode="nearest"))


def mask_update(m, g, epsilon_step: float, m_obj) -> np.ndarray:
    check_same_shape(m, g, m_obj)
    m_next = (np.asarray(m, dtype=np.float64) - epsilon_step * np.asarray(g)) * np.asarray(m_obj)
    return np.clip(m_next, 0.0, 1.0)


class HistoryRow(NamedTuple):
    l_attack: float
    l_binary: float
    l_agg: float
    top1_score: float
    mask_l1: float
    aggregation: float


@dataclass
class OptimState:
    t: int
    m: np.ndarray
    g: np.ndarray
    history: list[HistoryRow] = field(default_factory=list)
    stop_reason: str | None = None
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    snapshot_every: int = 0


def initial_mask(m_obj, seed: int) -> np.ndarray:
    m_obj = np.asarray(m_obj, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, m_obj.shape) * m_obj


def run(
    model: VictimModel,
    x,
    cover,
    m_obj,
    cfg: OptimConfig = OptimConfig(),
    snapshot_every: int = 0,
    m0=None,
) -> tuple[np.ndarray, np.ndarray, OptimState]:
    """Optimize the patch mask; returns ``(M*, x_adv*, state)``.

    ``snapshot_every > 0`` stores a copy of the mask at iterations
    0, k, 2k, ... in ``state.snapshots``.
    """
    x = np.asarray(x, dtype=np.float64)
    m_obj = np.asarray(m_obj, dtype=np.float64)
    check_same_shape(x, m_obj)
    if m_obj.sum() <= 0:
        raise ParameterError("object mask is empty")
    c = cover.value if isinstance(cover, CoverSpec) else float(cover)
    budget = cfg.budget(m_obj)
    k_gau = gaussian_kernel(cfg.gauss_size, cfg.gauss_sigma)
    support = m_obj > 0

    m = initial_mask(m_obj, cfg.seed) if m0 is None else np.asarray(m0, float) * m_obj
    state = OptimState(t=0, m=m, g=np.zeros_like(m), snapshot_every=snapshot_every)
    if snapshot_every:
        state.snapshots.append((0, m.copy()))

    x_adv = compose_adversarial(x, c, m)
    score = None
    for t in range(cfg.T):
        terms = loss_terms(model, x, c, m, cfg)
        # the mask only acts through M * M_obj, so pixels outside the object
        # carry no gradient
        grad = terms.grad * m_obj
        g = momentum_step(state.g, grad, cfg.mu)
        g = finetune_gradient(g, m, k_gau)
        m = mask_update(m, g, cfg.epsilon_step, m_obj)
        x_adv = compose_adversarial(x, c, m)
        score = model.score(x_adv).top1_score
        l1 = float(m.sum())
        agg = aggregation_map(m, support).mean_support
        state.t, state.m, state.g = t + 1, m, g
        state.history.append(HistoryRow(terms.attack, terms.binary, terms.agg, score, l1, agg))
        if snapshot_every and state.t % snapshot_every == 0:
            state.snapshots.append((state.t, m.copy()))
        if score <= cfg.s_thr and l1 <= budget:
            state.stop_reason = CONVERGED
            break
    else:
        state.stop_reason = BUDGET_EXCEEDED if score <= cfg.s_thr else MAX_ITERS
    log.debug("optimizer stopped after %d iterations: %s", state.t, state.stop_reason)
    return m, x_adv, state


def trace_masks(state: OptimState, every_k: int) -> list[tuple[int, np.ndarray]]:
    """Snapshots at iterations 0, k, 2k, ...

    ``k`` must be a multiple of the recorded interval unless it exceeds the
    run length, in which case only the initial mask qualifies.
    """
    if not state.snapshot_every:
        raise ParameterError("snapshots were not recorded for this run")
    if every_k < 1 or (every_k % state.snapshot_every and every_k <= state.t):
        raise ParameterError(
            f"every_k={every_k} is not a multiple of the recorded interval {state.snapshot_every}"
        )
    return [(t, m) for t, m in state.snapshots if t % every_k == 0]


def reference_step(model, x, cover, m, m_obj, cfg: OptimConfig) -> np.ndarray:
    """One memoryless update, written out long-hand (used with mu = 0)."""
    _, grad = total_loss(model, x, cover, m, cfg)
    grad = grad * m_obj
    norm = np.abs(grad).sum()
    direction = grad / norm if norm > 0 else np.zeros_like(grad)
    smooth = convolve_same(m, gaussian_kernel(cfg.gauss_size, cfg.gauss_sigma), mode="nearest")
    lo, hi = smooth.min(), smooth.max()
    weight = np.ones_like(smooth) if hi == lo else (smooth - lo) / (hi - lo)
    return np.clip((m - cfg.epsilon_step * direction * weight) * m_obj, 0.0, 1.0)
