"""Multi-PU head risk, OR aggregation, open-set fusion and confidence probabilities."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .losses import pu_loss

UNKNOWN = 0
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class OpenSetPrediction:
    known_label: int
    is_known: bool
    final_label: int
    per_head_probs: np.ndarray


@dataclass
class PredictionBatch:
    """Column-wise predictions for ``n`` samples.

    ``known_label`` and ``final_label`` are 1-based with 0 for UNKNOWN.
    """

    q_probs: np.ndarray
    per_head_probs: np.ndarray
    known_label: np.ndarray
    is_known: np.ndarray
    final_label: np.ndarray

    def __len__(self):
        return len(self.final_label)

    def __getitem__(self, i) -> OpenSetPrediction:
        return OpenSetPrediction(int(self.known_label[i]), bool(self.is_known[i]),
                                 int(self.final_label[i]), self.per_head_probs[i])

    def to_list(self) -> list[OpenSetPrediction]:
        return [self[i] for i in range(len(self))]


def positive_mask(labels, n_heads: int) -> np.ndarray:
    """Which labeled samples are positives for which head.

    With one head per class, head ``c`` owns class ``c + 1``; a single head
    takes every labeled sample as positive.
    """
    labels = np.asarray(labels)
    if n_heads == 1:
        return np.ones((len(labels), 1), dtype=bool)
    return labels[:, None] == np.arange(1, n_heads + 1)[None, :]


def multi_pu_risk(pu_known, known_labels, pu_wild, loss="bce", weights=None, t=2):
    """Sum over heads of 0.5 * (mean positive loss + mean wild negative loss).

    ``pu_known`` is ``(n_k, H)``, ``pu_wild`` is ``(n_w, H)`` and ``weights``
    (optional) is ``(n_w, H)``.  Returns ``(risk, grad_known, grad_wild)``
    where the gradients are with respect to the probability tables.
    """
    pu_known = np.asarray(pu_known, dtype=np.float64)
    pu_wild = np.asarray(pu_wild, dtype=np.float64)
    H = pu_wild.shape[1]
    pos = positive_mask(known_labels, H)
    n_pos = pos.sum(axis=0)
    if np.any(n_pos == 0):
        missing = [c + 1 for c in np.flatnonzero(n_pos == 0)]
        warnings.warn(f"no labeled positives in batch for heads {missing}; skipping their positive term",
                      RuntimeWarning, stacklevel=2)
    l_pos, g_pos = pu_loss(loss, pu_known, 1.0, None, t)
    scale_pos = np.where(n_pos > 0, 0.5 / np.maximum(n_pos, 1), 0.0)
    grad_known = np.where(pos, g_pos, 0.0) * scale_pos
    risk_pos = float(np.sum(np.where(pos, l_pos, 0.0) * scale_pos))

    l_neg, g_neg = pu_loss(loss, pu_wild, 0.0, weights, t)
    n_w = pu_wild.shape[0]
    risk_neg = float(l_neg.sum() * 0.5 / n_w)
    grad_wild = g_neg * (0.5 / n_w)
    return risk_pos + risk_neg, grad_known, grad_wild


def or_aggregate(per_head_probs, threshold: float = DEFAULT_THRESHOLD):
    """Known iff any head reaches the threshold (inclusive).  Works row-wise."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return np.any(np.asarray(per_head_probs) >= threshold, axis=-1)


def fuse(q_probs, is_known):
    """Argmax of q (lowest index on ties) where known, UNKNOWN elsewhere."""
    known_label = np.argmax(np.asarray(q_probs), axis=-1) + 1
    return known_label, np.where(is_known, known_label, UNKNOWN)


def predict_from_probs(q_probs, pu_probs, threshold=DEFAULT_THRESHOLD) -> PredictionBatch:
    q_probs = np.atleast_2d(q_probs)
    pu_probs = np.atleast_2d(pu_probs)
    is_known = or_aggregate(pu_probs, threshold)
    known_label, final = fuse(q_probs, is_known)
    return PredictionBatch(q_probs, pu_probs, known_label, is_known, final)


def confidence_probs(mode: str, q_probs, pu_probs):
    """Unknownness probability per head: ``1 - f`` (pro) or ``1 - q * f`` (mixpro).

    For a single shared PU head, mixpro mixes with ``max_c q_c``.
    """
    q = np.asarray(q_probs, dtype=np.float64)
    f = np.asarray(pu_probs, dtype=np.float64)
    mode = mode.lower()
    if mode == "pro":
        p = 1.0 - f
    elif mode == "mixpro":
        if f.shape[-1] == 1 and q.shape[-1] != 1:
            q = q.max(axis=-1, keepdims=True)
        p = 1.0 - q * f
    else:
        raise ValueError(f"unknown confidence mode {mode!r}")
    return np.clip(p, 0.0, 1.0)
