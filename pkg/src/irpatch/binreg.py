"""Binary and sparsity regularization of the relaxed mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class BinRegConfig:
    v_thre: float = 0.5
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.v_thre < 1.0:
            raise ParameterError(f"v_thre must lie in (0, 1), got {self.v_thre}")
        if self.alpha < 0:
            raise ParameterError(f"alpha must be non-negative, got {self.alpha}")


def h_map(m, v_thre: float) -> tuple[np.ndarray, np.ndarray]:
    """Thresholded map and its derivative.

    Entries at or below ``v_thre`` map to 1 with derivative 0; entries above
    it pass through with derivative 1.
    """
    m = np.asarray(m, dtype=np.float64)
    above = m > v_thre
    return np.where(above, m, 1.0), above.astype(np.float64)


def loss_binary(m, cfg: BinRegConfig = BinRegConfig()) -> tuple[float, np.ndarray]:
    """``||M||_1 + alpha * mean((H(M) - 1)^2)`` and its (sub)gradient."""
    m = np.asarray(m, dtype=np.float64)
    n = m.size
    h, dh = h_map(m, cfg.v_thre)
    l1 = float(np.abs(m).sum())
    mse = float(((h - 1.0) ** 2).sum() / n)
    # mask entries are non-negative, so the L1 subgradient is 1 everywhere
    grad = 1.0 + cfg.alpha * (2.0 / n) * (h - 1.0) * dh
    return l1 + cfg.alpha * mse, grad
