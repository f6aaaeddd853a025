"""Synthetic Huber-contamination datasets plus CSV ingestion.

Labels are 1..C for known classes and 0 for unknown.  Wild samples keep
their generating label only for evaluation and audit; the training-facing
:class:`WildSet` refuses to hand it out.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNLABELED_CODE = -1


class Role(enum.Enum):
    LABELED_KNOWN = "labeled"
    WILD = "wild"
    TEST = "test"


class LeakError(RuntimeError):
    """Raised when training-facing code asks for hidden wild labels."""


class SchemaError(ValueError):
    pass


class CSVParseError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    spectrum: np.ndarray
    role: Role
    _label: int = field(default=0, repr=False)

    @property
    def true_label(self) -> int:
        if self.role is Role.WILD:
            raise LeakError("wild sample labels are hidden from training")
        return self._label


@dataclass(frozen=True)
class ContaminationSpec:
    """Gaussian mixture defining the known, unknown and wild distributions.

    ``class_priors[c]`` is the mass of known class ``c + 1`` in the wild
    mixture; ``unknown_priors`` split the remaining mass over the unknown
    components.  All components share the diagonal standard deviation
    ``sigma``.
    """

    class_priors: tuple[float, ...]
    unknown_priors: tuple[float, ...]
    known_means: np.ndarray
    unknown_means: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        cp = np.asarray(self.class_priors, dtype=float)
        up = np.asarray(self.unknown_priors, dtype=float)
        if np.any(cp < 0) or np.any(up < 0):
            raise ValueError("priors must be non-negative")
        if abs(cp.sum() + up.sum() - 1.0) > 1e-12:
            raise ValueError(f"priors sum to {cp.sum() + up.sum()!r}, expected 1")
        if len(cp) != len(self.known_means) or len(up) != len(self.unknown_means):
            raise ValueError("prior and component counts differ")
        if up.sum() > 0 and len(up) == 0:
            raise ValueError("unknown mass without unknown components")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def n_classes(self) -> int:
        return len(self.class_priors)

    @property
    def dim(self) -> int:
        return int(np.shape(self.known_means)[1])

    @property
    def pi(self) -> float:
        return float(sum(self.class_priors))

    @property
    def unknown_mass(self) -> float:
        return float(sum(self.unknown_priors))

    def component_weights(self) -> np.ndarray:
        return np.concatenate([self.class_priors, self.unknown_priors]).astype(float)

    def component_labels(self) -> np.ndarray:
        return np.concatenate([np.arange(1, self.n_classes + 1),
                               np.zeros(len(self.unknown_priors), dtype=int)])

    def means(self) -> np.ndarray:
        return np.vstack([np.asarray(self.known_means, float).reshape(-1, self.dim),
                          np.asarray(self.unknown_means, float).reshape(-1, self.dim)])

    def as_dict(self) -> dict:
        return {"class_priors": list(map(float, self.class_priors)),
                "unknown_priors": list(map(float, self.unknown_priors)),
                "sigma": float(self.sigma),
                "known_means": np.asarray(self.known_means).tolist(),
                "unknown_means": np.asarray(self.unknown_means).tolist()}


def synthetic_spec(n_known=3, n_unknown=2, dim=20, pi=0.6, separation=3.0,
                   overlap=0.6, sigma=1.0, seed=0) -> ContaminationSpec:
    """Known Gaussians at mutual distance about ``separation``; unknowns placed between them.

    Unknown component ``j`` sits at the midpoint of two known means, pushed
    off the segment by ``(1 - overlap) * separation`` along a random
    orthogonal direction, so larger ``overlap`` means harder rejection.
    The known mass ``pi`` is split evenly across known classes.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    scale = separation / np.sqrt(2.0)
    known = scale * basis[:, :n_known].T
    unknown = []
    for j in range(n_unknown):
        a, b = j % n_known, (j + 1) % n_known
        direction = basis[:, n_known + j] if n_known + j < dim else basis[:, -1]
        mid = 0.5 * (known[a] + known[b]) if n_known > 1 else known[a]
        unknown.append(mid + (1.0 - overlap) * separation * direction)
    unknown = np.array(unknown).reshape(n_unknown, dim)
    cp = tuple([pi / n_known] * n_known)
    up = tuple([(1.0 - pi) / n_unknown] * n_unknown) if n_unknown else ()
    if not n_unknown and abs(pi - 1.0) > 1e-12:
        raise ValueError("pi < 1 requires at least one unknown component")
    return ContaminationSpec(cp, up, known, unknown, sigma)


def _draw(spec: ContaminationSpec, weights, n, rng):
    weights = np.asarray(weights, dtype=float)
    comp = rng.choice(len(weights), size=n, p=weights / weights.sum())
    X = spec.means()[comp] + spec.sigma * rng.standard_normal((n, spec.dim))
    return X, spec.component_labels()[comp]


def sample_wild_arrays(spec: ContaminationSpec, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _draw(spec, spec.component_weights(), n, rng)


def sample_wild(spec: ContaminationSpec, n: int, seed=0) -> list[Sample]:
    X, y = sample_wild_arrays(spec, n, np.random.default_rng(seed))
    return [Sample(x, Role.WILD, int(c)) for x, c in zip(X, y)]


def sample_known(spec: ContaminationSpec, label: int, n: int, rng) -> np.ndarray:
    m = np.asarray(spec.known_means, float)[label - 1]
    return m + spec.sigma * rng.standard_normal((n, spec.dim))


def sample_unknown(spec: ContaminationSpec, n: int, rng) -> np.ndarray:
    w = np.concatenate([np.zeros(spec.n_classes), spec.unknown_priors])
    return _draw(spec, w, n, rng)[0]


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return int(self.y.max())


class WildSet:
    """Unlabeled spectra.  Iteration yields spectra; labels stay hidden."""

    def __init__(self, X, hidden_labels=None):
        self.X = np.asarray(X, dtype=np.float64)
        self._hidden = None if hidden_labels is None else np.asarray(hidden_labels)

    def __len__(self):
        return len(self.X)

    def __iter__(self):
        return iter(self.X)

    @property
    def true_labels(self):
        raise LeakError("wild sample labels are hidden from training; use audit_labels() for evaluation")

    def audit_labels(self) -> np.ndarray:
        if self._hidden is None:
            raise LeakError("no audit labels recorded for this wild set")
        return self._hidden

    def samples(self) -> list[Sample]:
        hidden = self._hidden if self._hidden is not None else np.zeros(len(self), int)
        return [Sample(x, Role.WILD, int(c)) for x, c in zip(self.X, hidden)]


@dataclass(frozen=True)
class TestSet:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


AUX_SOURCES = ("wild", "pure_unknown", "wild_minus_unknown")


def _filtered_wild(spec, n, rng, keep):
    X_parts, y_parts, got = [], [], 0
    while got < n:
        X, y = sample_wild_arrays(spec, max(2 * (n - got), 64), rng)
        m = keep(y)
        X_parts.append(X[m])
        y_parts.append(y[m])
        got += int(m.sum())
    return np.vstack(X_parts)[:n], np.concatenate(y_parts)[:n]


def make_split(spec: ContaminationSpec, per_class_labeled=100, n_wild=4000, n_test=5000,
               seed=0, aux_source="wild") -> tuple[LabeledSet, WildSet, TestSet]:
    """Labeled known set, wild (auxiliary) set and test set as independent draws.

    ``aux_source`` swaps the wild set for pure unknown data or for the known
    part of the wild mixture; both are filters on the wild draw's hidden labels.
    """
    if min(per_class_labeled, n_wild, n_test) < 1:
        raise ValueError("all counts must be >= 1")
    if aux_source not in AUX_SOURCES:
        raise ValueError(f"aux_source must be one of {AUX_SOURCES}")
    rng_k, rng_w, rng_t = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    Xk = np.vstack([sample_known(spec, c, per_class_labeled, rng_k) for c in range(1, spec.n_classes + 1)])
    yk = np.repeat(np.arange(1, spec.n_classes + 1), per_class_labeled)
    if aux_source == "wild":
        Xw, yw = sample_wild_arrays(spec, n_wild, rng_w)
    elif aux_source == "pure_unknown":
        if spec.unknown_mass <= 0:
            raise ValueError("pure_unknown auxiliary data needs unknown mass > 0")
        Xw, yw = _filtered_wild(spec, n_wild, rng_w, lambda y: y == 0)
    else:
        if spec.pi <= 0:
            raise ValueError("wild_minus_unknown auxiliary data needs known mass > 0")
        Xw, yw = _filtered_wild(spec, n_wild, rng_w, lambda y: y > 0)
    Xt, yt = sample_wild_arrays(spec, n_test, rng_t)
    return LabeledSet(Xk, yk), WildSet(Xw, yw), TestSet(Xt, yt)


# ---------------------------------------------------------------- CSV / manifests

def fit_minmax(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    return X.min(axis=0), X.max(axis=0)


def apply_minmax(X, lo, hi) -> np.ndarray:
    span = np.where(hi > lo, hi - lo, 1.0)
    return (np.asarray(X, dtype=np.float64) - lo) / span


def read_csv_arrays(path, band_count: int, label_column: int = -1,
                    unknown_label_code: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``band_count`` numeric bands plus one integer label per row.

    A first row that fails to parse as numbers is taken as a header.  The
    unknown code maps to label 0.
    """
    width = band_count + 1
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise SchemaError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            lab = row[label_column]
            bands = row[:label_column] + row[label_column + 1:] if label_column != -1 else row[:-1]
            try:
                values = [float(v) for v in bands]
                code = int(lab)
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise CSVParseError(f"{path}:{lineno}: non-numeric field in row") from None
            rows.append(values)
            labels.append(0 if code == unknown_label_code else code)
    if not rows:
        return np.zeros((0, band_count)), np.zeros(0, dtype=int)
    X = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise CSVParseError(f"{path}: non-finite band value")
    return X, np.asarray(labels, dtype=int)


def load_csv(path, band_count: int, label_column: int = -1, unknown_label_code: int = 0,
             normalize: bool = False, minmax=None, role: Role = Role.TEST) -> list[Sample]:
    """Load pixel rows as samples; ``minmax`` supplies training-set (lo, hi) statistics."""
    X, y = read_csv_arrays(path, band_count, label_column, unknown_label_code)
    if normalize and len(X):
        lo, hi = minmax if minmax is not None else fit_minmax(X)
        X = apply_minmax(X, lo, hi)
    return [Sample(x, role, int(c)) for x, c in zip(X, y)]


def write_csv(path, X, labels, header=True) -> None:
    X = np.asarray(X)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"b{i}" for i in range(X.shape[1])] + ["label"])
        for x, c in zip(X, labels):
            w.writerow([repr(float(v)) for v in x] + [int(c)])


def write_manifest(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={v}\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"{path}: malformed line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
