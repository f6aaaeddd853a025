"""Open-set metrics, the wild-substitution risk bound checker and gradient-weight sweeps."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .heads import UNKNOWN, PredictionBatch
from .losses import harmonic_number, tbce_loss

BOUND_TOL = 1e-9


class UndefinedMetricError(ValueError):
    pass


class UnsupportedModeError(ValueError):
    pass


# ---------------------------------------------------------------- metrics

def auc_bruteforce(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    greater = int(np.sum(pos[:, None] > neg[None, :]))
    ties = int(np.sum(pos[:, None] == neg[None, :]))
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; positives are label 1."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(s)  # average ranks are multiples of 1/2, exact in float64
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    open_oa: float
    closed_oa: float
    f1_u: float
    auc_u: float
    precision_u: float
    recall_u: float
    producer_acc: np.ndarray
    user_acc: np.ndarray
    confusion: np.ndarray

    def summary(self) -> dict[str, float]:
        return {"open_oa": self.open_oa, "closed_oa": self.closed_oa, "f1_u": self.f1_u, "auc_u": self.auc_u}

    def to_text(self) -> str:
        lines = [f"Open OA   {100 * self.open_oa:6.2f}",
                 f"Closed OA {100 * self.closed_oa:6.2f}",
                 f"F1u       {100 * self.f1_u:6.2f}",
                 f"AUCu      {100 * self.auc_u:6.2f}",
                 "confusion (rows = truth 0..C, cols = prediction 0..C; 0 = unknown):"]
        lines += ["  " + " ".join(f"{v:6d}" for v in row) for row in self.confusion]
        return "\n".join(lines) + "\n"


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    k = n_classes + 1
    return np.bincount(np.asarray(truth) * k + np.asarray(pred), minlength=k * k).reshape(k, k)


def _safe_div(a, b):
    return float(a) / float(b) if b else 0.0


def metrics_from_confusion(M: np.ndarray, auc_u: float = float("nan")) -> MetricsReport:
    M = np.asarray(M)
    total = M.sum()
    open_oa = _safe_div(np.trace(M), total)
    known = M[1:, 1:]
    closed_oa = _safe_div(np.trace(known), known.sum())
    tp = M[0, 0]
    precision = _safe_div(tp, M[:, 0].sum())
    recall = _safe_div(tp, M[0, :].sum())
    f1 = _safe_div(2 * precision * recall, precision + recall)
    diag = np.diag(M).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        producer = np.where(M.sum(axis=1) > 0, diag / M.sum(axis=1), np.nan)
        user = np.where(M.sum(axis=0) > 0, diag / M.sum(axis=0), np.nan)
    return MetricsReport(open_oa, closed_oa, f1, auc_u, precision, recall, producer, user, M)


def unknown_scores(preds: PredictionBatch, score: str = "pu") -> np.ndarray:
    """Unknownness: ``1 - max_c f^c`` ("pu") or ``1 - max_c q_c f^c`` ("mixpro")."""
    f = np.asarray(preds.per_head_probs)
    if score == "pu":
        return 1.0 - f.max(axis=1)
    if score == "mixpro":
        q = np.asarray(preds.q_probs)
        if f.shape[1] == 1:
            return 1.0 - q.max(axis=1) * f[:, 0]
        return 1.0 - (q * f).max(axis=1)
    raise ValueError(f"unknown score {score!r}")


def compute_metrics(preds, truths, n_classes: int | None = None, score: str = "pu") -> MetricsReport:
    """Open/closed OA, F1 and AUC of the unknown class.

    ``preds`` is a :class:`PredictionBatch` or a list of ``OpenSetPrediction``.
    ``truths`` uses 0 for unknown.  AUC is NaN when only one of known/unknown
    is present in ``truths``.
    """
    if not isinstance(preds, PredictionBatch):
        preds = list(preds)
        if not preds:
            raise ValueError("no predictions to evaluate")
        H = np.vstack([p.per_head_probs for p in preds])
        preds = PredictionBatch(np.full((len(preds), 1), np.nan), H,
                                np.array([p.known_label for p in preds]),
                                np.array([p.is_known for p in preds]),
                                np.array([p.final_label for p in preds]))
        if score == "mixpro":
            raise ValueError("mixpro score needs q probabilities; pass a PredictionBatch")
    truths = np.asarray(truths, dtype=int)
    if len(truths) == 0:
        raise ValueError("no predictions to evaluate")
    if len(truths) != len(preds):
        raise ValueError("predictions and truths differ in length")
    if n_classes is None:
        n_classes = int(max(truths.max(), preds.final_label.max(), preds.known_label.max()))
    M = confusion_matrix(truths, preds.final_label, n_classes)
    is_unknown = truths == UNKNOWN
    if is_unknown.all() or not is_unknown.any():
        auc_u = float("nan")
    else:
        auc_u = auc(unknown_scores(preds, score), is_unknown)
    return metrics_from_confusion(M, auc_u)


def write_metrics_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


# ---------------------------------------------------------------- risk bounds

def _tbce(f, y, t):
    return tbce_loss(f, y, t)[0]


@dataclass
class DiscreteToySpace:
    """Finite input space: known-class and unknown-class masses over ``K`` atoms."""

    p_known: np.ndarray
    p_unknown: np.ndarray
    pi: float

    def __post_init__(self):
        self.p_known = np.asarray(self.p_known, dtype=np.float64)
        self.p_unknown = np.asarray(self.p_unknown, dtype=np.float64)
        if self.p_known.shape != self.p_unknown.shape:
            raise ValueError("mass vectors differ in length")
        for p in (self.p_known, self.p_unknown):
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("masses must be non-negative and sum to one")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError("pi must lie in [0, 1]")

    @property
    def p_wild(self) -> np.ndarray:
        return self.pi * self.p_known + (1.0 - self.pi) * self.p_unknown

    @classmethod
    def random(cls, n_atoms: int, rng, pi=None) -> "DiscreteToySpace":
        pk = rng.dirichlet(np.ones(n_atoms))
        pu = rng.dirichlet(np.ones(n_atoms))
        return cls(pk, pu, float(rng.uniform()) if pi is None else pi)


def risk_u_atoms(space: DiscreteToySpace, f, t):
    """Ideal rejection risk: known positives versus true unknown negatives."""
    return 0.5 * (space.p_known @ _tbce(f, 1.0, t) + space.p_unknown @ _tbce(f, 0.0, t))


def risk_pu_atoms(space: DiscreteToySpace, f, t):
    """Rejection risk with the unknown negatives replaced by wild data."""
    return 0.5 * (space.p_known @ _tbce(f, 1.0, t) + space.p_wild @ _tbce(f, 0.0, t))


def quantized_levels(n_levels: int = 21) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_levels)


def exhaustive_minimizer(space: DiscreteToySpace, t, which: str, n_levels: int = 21) -> np.ndarray:
    """Global minimiser over quantised probability tables.

    Both risks are sums of per-atom terms, so the search over
    ``n_levels ** K`` tables factorises into ``K`` searches over the levels.
    """
    levels = quantized_levels(n_levels)
    lp = _tbce(levels, 1.0, t)
    ln = _tbce(levels, 0.0, t)
    neg = space.p_unknown if which == "u" else space.p_wild
    per_atom = space.p_known[:, None] * lp[None, :] + neg[:, None] * ln[None, :]
    return levels[np.argmin(per_atom, axis=1)]


@dataclass
class BoundReport:
    pi: float
    t: int
    N_t: float
    risk_u: float
    risk_pu: float
    observed_gap: float
    bound: float
    excess_u: float
    excess_pu: float
    tolerance: float
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_bounds_discrete(space: DiscreteToySpace, f, t: int, n_levels: int = 21,
                          tol: float = BOUND_TOL) -> BoundReport:
    """Exact sandwich and excess-risk checks on an enumerable input space.

    The excess risks compare exhaustively found minimisers of the ideal and
    the wild-substituted risk over ``n_levels``-level probability tables.
    """
    f = np.asarray(f, dtype=np.float64)
    N_t = harmonic_number(t)
    r_u, r_pu = float(risk_u_atoms(space, f, t)), float(risk_pu_atoms(space, f, t))
    f_star = exhaustive_minimizer(space, t, "u", n_levels)
    f_hat = exhaustive_minimizer(space, t, "pu", n_levels)
    excess_u = float(risk_u_atoms(space, f_hat, t) - risk_u_atoms(space, f_star, t))
    excess_pu = float(risk_pu_atoms(space, f_star, t) - risk_pu_atoms(space, f_hat, t))
    gap = abs(r_u - r_pu)
    bound = space.pi * N_t / 2.0
    cap = space.pi * N_t + tol
    holds = (gap <= bound + tol and -tol <= excess_u <= cap and -tol <= excess_pu <= cap)
    return BoundReport(space.pi, t, N_t, r_u, r_pu, gap, bound, excess_u, excess_pu, tol, bool(holds))


def check_bounds_mc(spec, f, t: int, n_mc: int = 20000, seed=0, head: int | None = None) -> BoundReport:
    """Monte-Carlo check of the sandwich bound on a generative spec.

    ``f`` maps an ``(n, d)`` array to probabilities in [0, 1].  With
    ``head = c`` the check concerns the one-vs-rest task of class ``c``,
    whose prior is ``pi_c``.  The gap is accepted within three standard
    errors of its estimate; the excess-risk fields are not estimated here
    (NaN) because minimisers over a continuous input space are unavailable.
    """
    from .data import ContaminationSpec, sample_known

    if not isinstance(spec, ContaminationSpec):
        raise UnsupportedModeError("the bound check needs a generative spec with known priors")
    rng = np.random.default_rng(seed)
    N_t = harmonic_number(t)
    cp = np.asarray(spec.class_priors, float)
    if head is None:
        pi = spec.pi
        if pi > 0:
            labels = rng.choice(spec.n_classes, size=n_mc, p=cp / pi) + 1
            Xk = np.vstack([sample_known(spec, c, int(np.sum(labels == c)), rng)
                            for c in range(1, spec.n_classes + 1)])
        else:
            Xk = None
        w_neg = np.concatenate([np.zeros(spec.n_classes), spec.unknown_priors])
    else:
        pi = float(cp[head - 1])
        Xk = sample_known(spec, head, n_mc, rng)
        w_neg = spec.component_weights().copy()
        w_neg[head - 1] = 0.0
    if w_neg.sum() > 0:
        from .data import _draw
        Xn = _draw(spec, w_neg, n_mc, rng)[0]
        neg_loss = _tbce(np.asarray(f(Xn), float), 0.0, t)
    else:
        neg_loss = np.zeros(1)
    pos_loss_neg = _tbce(np.asarray(f(Xk), float), 0.0, t) if Xk is not None else np.zeros(1)
    pos_loss = _tbce(np.asarray(f(Xk), float), 1.0, t) if Xk is not None else np.zeros(1)
    # R_pu - R_u = pi/2 * (E_k[L(f,0)] - E_neg[L(f,0)]): estimate the difference directly
    r_u = 0.5 * (pos_loss.mean() + neg_loss.mean())
    r_wild_neg = pi * pos_loss_neg.mean() + (1 - pi) * neg_loss.mean()
    r_pu = 0.5 * (pos_loss.mean() + r_wild_neg)
    gap = abs(r_pu - r_u)
    se = 0.5 * pi * np.sqrt(pos_loss_neg.var() / len(pos_loss_neg) + neg_loss.var() / len(neg_loss))
    bound = pi * N_t / 2.0
    tol = 3.0 * float(se) + BOUND_TOL
    nan = float("nan")
    return BoundReport(pi, t, N_t, float(r_u), float(r_pu), float(gap), bound, nan, nan, tol,
                       bool(gap <= bound + tol))


# ---------------------------------------------------------------- gradient weights

def gradient_weight_sweep(t_values, f_grid) -> list[dict]:
    """Wild-sample gradient weights: ``(1 - f^t)/(1 - f)`` (Taylor) against ``1/(1 - f)`` (BCE)."""
    f_grid = np.asarray(f_grid, dtype=np.float64)
    if np.any(f_grid <= 0) or np.any(f_grid >= 1):
        raise ValueError("f_grid must lie strictly inside (0, 1)")
    rows = []
    for t in t_values:
        w_t = tbce_loss(f_grid, 0.0, int(t))[1]
        w_b = 1.0 / (1.0 - f_grid)
        rows.extend({"f": float(f), "t": int(t), "tbce_weight": float(a), "bce_weight": float(b)}
                    for f, a, b in zip(f_grid, w_t, w_b))
    return rows
