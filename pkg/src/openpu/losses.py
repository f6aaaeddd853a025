"""Elementwise losses and their derivatives with respect to the probability input.

Every function broadcasts over arrays and returns ``(loss, grad)`` of the
same shape; reduction over samples is left to the caller.  Binary labels use
1 for known and 0 for wild/unknown.  Confidence weights are constants: no
derivative with respect to them is ever produced.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import clamp_prob

log = logging.getLogger(__name__)

LOSS_NAMES = ("bce", "tbce", "wbce", "wtbce")


def harmonic_number(t: int) -> float:
    if t < 1:
        raise ValueError("Taylor order must be >= 1")
    return float(sum(1.0 / o for o in range(1, t + 1)))


@dataclass(frozen=True)
class LossConfig:
    taylor_order: int = 2
    beta: float = 1.0
    N_t: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "N_t", harmonic_number(self.taylor_order))
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def ce_loss(q_probs, label):
    """Cross entropy for 1-based class labels; grad is d loss / d q_probs."""
    q = clamp_prob(np.asarray(q_probs, dtype=np.float64))
    label = np.asarray(label)
    C = q.shape[-1]
    if np.any(label < 1) or np.any(label > C):
        raise ValueError(f"class label outside 1..{C}")
    onehot = np.arange(1, C + 1) == label[..., None]
    q_y = np.where(onehot, q, 0.0).sum(axis=-1)
    grad = np.where(onehot, -1.0 / q, 0.0)
    return -np.log(q_y), grad


def bce_loss(f, y):
    f = clamp_prob(np.asarray(f, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    loss = -y * np.log(f) - (1 - y) * np.log1p(-f)
    grad = (1 - y) / (1 - f) - y / f
    return loss, grad


def _taylor_terms(f, t):
    # sum_{o=1..t} f^o / o and its derivative (1 - f^t)/(1 - f).  The closed form
    # keeps the float derivative <= fl(1/(1 - f)); a running sum can overshoot by an ulp.
    s = np.zeros_like(f)
    power = np.ones_like(f)
    for o in range(1, t + 1):
        power = power * f
        s += power / o
    with np.errstate(divide="ignore", invalid="ignore"):
        ds = np.where(f < 1.0, (1.0 - power) / (1.0 - f), float(t))
    return s, ds


def tbce_loss(f, y, t: int = 2):
    """Order-``t`` Taylor truncation of BCE on the negative branch."""
    if t < 1:
        raise ValueError("Taylor order must be >= 1")
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fc = clamp_prob(f)
    s, ds = _taylor_terms(f, t)
    loss = -y * np.log(fc) + (1 - y) * s
    grad = (1 - y) * ds - y / fc
    return loss, grad


def _check_weight(w):
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0) or np.any(w > 1):
        warnings.warn("confidence weight outside [0, 1]; clamping", RuntimeWarning, stacklevel=3)
        w = np.clip(w, 0.0, 1.0)
    return w


def wbce_loss(f, y, w_e):
    w = _check_weight(w_e)
    f = clamp_prob(np.asarray(f, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    loss = -y * np.log(f) - (1 - y) * w * np.log1p(-f)
    grad = (1 - y) * w / (1 - f) - y / f
    return loss, grad


def wtbce_loss(f, y, w_c, t: int = 2):
    if t < 1:
        raise ValueError("Taylor order must be >= 1")
    w = _check_weight(w_c)
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fc = clamp_prob(f)
    s, ds = _taylor_terms(f, t)
    loss = -y * np.log(fc) + (1 - y) * w * s
    grad = (1 - y) * w * ds - y / fc
    return loss, grad


def pu_loss(name: str, f, y, weight=None, t: int = 2):
    """Dispatch by loss name; unweighted losses ignore ``weight``."""
    if name == "bce":
        return bce_loss(f, y)
    if name == "tbce":
        return tbce_loss(f, y, t)
    w = 1.0 if weight is None else weight
    if name == "wbce":
        return wbce_loss(f, y, w)
    if name == "wtbce":
        return wtbce_loss(f, y, w, t)
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


def kl_align(p, q):
    """Symmetric Bernoulli KL between two PU-head probability tables.

    ``0.5 * (KL(p||q) + KL(q||p))`` averaged over every entry, which for
    Bernoulli pairs equals ``0.5 * (p - q) * (logit p - logit q)``.
    Returns ``(loss, grad_p, grad_q)`` with gradients of the averaged loss.
    """
    p = clamp_prob(np.asarray(p, dtype=np.float64))
    q = clamp_prob(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise ValueError("kl_align inputs must have equal shapes")
    dlogit = (np.log(p) - np.log1p(-p)) - (np.log(q) - np.log1p(-q))
    diff = p - q
    n = p.size
    loss = 0.5 * np.sum(diff * dlogit) / n
    grad_p = 0.5 * (dlogit + diff / (p * (1 - p))) / n
    grad_q = 0.5 * (-dlogit - diff / (q * (1 - q))) / n
    return float(loss), grad_p, grad_q
