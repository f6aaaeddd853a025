"""EMA confidence weights for the weighted PU losses.

``w_c`` (used by the weighted Taylor loss) is driven by the Grad-E network's
unknownness probability ``p_e``; ``w_e`` (used by weighted BCE) is driven by
the Grad-C network's ``p_c``.  Weights are stored per (wild sample, head).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
DISCRETE = "discrete"
MODES = (CONTINUOUS, DISCRETE)


def default_modes() -> tuple[str, str]:
    """(mode for w_c, mode for w_e)."""
    return CONTINUOUS, DISCRETE


def ema_target(p, mode: str, tau: float):
    if mode == CONTINUOUS:
        return np.asarray(p, dtype=np.float64)
    if mode == DISCRETE:
        return (np.asarray(p) >= tau).astype(np.float64)
    raise ValueError(f"unknown updating mode {mode!r}")


@dataclass
class ConfidenceState:
    n_wild: int
    n_heads: int = 1
    alpha: float = 0.9
    tau: float = 0.95
    mode_c: str = CONTINUOUS
    mode_e: str = DISCRETE
    w_c: np.ndarray = field(default=None, repr=False)
    w_e: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        for m in (self.mode_c, self.mode_e):
            if m not in MODES:
                raise ValueError(f"unknown updating mode {m!r}")
        shape = (self.n_wild, self.n_heads)
        if self.w_c is None:
            self.w_c = np.ones(shape)
        if self.w_e is None:
            self.w_e = np.ones(shape)
        if self.w_c.shape != shape or self.w_e.shape != shape:
            raise ValueError(f"weight tables must have shape {shape}")

    def update(self, sample_idx, p_c, p_e) -> "ConfidenceState":
        """One EMA step for the given wild indices (int or array).

        Note the cross-coupling: ``w_c`` reads ``p_e`` and ``w_e`` reads ``p_c``.
        """
        idx = np.atleast_1d(np.asarray(sample_idx))
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_wild):
            raise IndexError(f"wild sample index out of range [0, {self.n_wild})")
        p_c = np.broadcast_to(np.asarray(p_c, dtype=np.float64), (idx.size, self.n_heads))
        p_e = np.broadcast_to(np.asarray(p_e, dtype=np.float64), (idx.size, self.n_heads))
        a = self.alpha
        self.w_c[idx] = a * self.w_c[idx] + (1 - a) * ema_target(p_e, self.mode_c, self.tau)
        self.w_e[idx] = a * self.w_e[idx] + (1 - a) * ema_target(p_c, self.mode_e, self.tau)
        return self

    def update_all(self, p_c, p_e) -> "ConfidenceState":
        return self.update(np.arange(self.n_wild), p_c, p_e)
