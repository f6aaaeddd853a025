import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openpu.data import synthetic_spec
from openpu.evaluate import (
    DiscreteToySpace, UndefinedMetricError, UnsupportedModeError, auc, auc_bruteforce, check_bounds_discrete,
    check_bounds_mc, compute_metrics, confusion_matrix, exhaustive_minimizer, gradient_weight_sweep,
    metrics_from_confusion, quantized_levels, risk_pu_atoms, risk_u_atoms,
)
from openpu.heads import predict_from_probs
from openpu.losses import tbce_loss


def preds_for(labels, C):
    """PredictionBatch whose final labels equal ``labels`` (0 = unknown)."""
    labels = np.asarray(labels)
    q = np.full((len(labels), C), 0.1)
    f = np.full((len(labels), C), 0.1)
    for i, lab in enumerate(labels):
        k = (lab - 1) if lab else 0
        q[i, k] = 0.9
        if lab:
            f[i, k] = 0.9
    return predict_from_probs(q, f)


def test_hand_built_confusion():
    truth = [1, 1, 2, 0, 0, 2]
    pred = [1, 2, 2, 0, 1, 0]
    r = compute_metrics(preds_for(pred, 2), truth, 2)
    np.testing.assert_array_equal(r.confusion, [[1, 1, 0], [0, 1, 1], [1, 0, 1]])
    assert r.open_oa == 0.5
    assert r.closed_oa == pytest.approx(2 / 3)
    assert r.precision_u == 0.5 and r.recall_u == 0.5 and r.f1_u == 0.5


def test_perfect_and_all_known():
    truth = [0, 1, 2, 0, 2]
    r = compute_metrics(preds_for(truth, 2), truth, 2)
    assert r.open_oa == 1.0 and r.f1_u == 1.0 and r.auc_u == 1.0
    r = compute_metrics(preds_for([1, 1, 2, 2, 2], 2), truth, 2)
    assert r.f1_u == 0.0


def test_list_of_predictions_accepted():
    truth = [0, 1, 2]
    r = compute_metrics(preds_for(truth, 2).to_list(), truth, 2)
    assert r.open_oa == 1.0
    with pytest.raises(ValueError):
        compute_metrics([], [])


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_open_oa_equals_samplewise_accuracy(pairs):
    truth, pred = map(np.array, zip(*pairs))
    M = confusion_matrix(truth, pred, 3)
    assert metrics_from_confusion(M).open_oa == np.mean(truth == pred)


def test_auc_examples():
    assert auc_bruteforce([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc_bruteforce([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auc_bruteforce([0.9, 0.4, 0.6], [1, 0, 1]) == 1.0
    with pytest.raises(UndefinedMetricError):
        auc_bruteforce([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [0, 0])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=500))
def test_auc_equals_bruteforce_exactly(rows):
    scores, labels = zip(*rows)
    labels = np.array(labels)
    if labels.all() or not labels.any():
        return
    s = np.array(scores) / 20.0  # coarse grid forces ties
    assert auc(s, labels) == auc_bruteforce(s, labels)


def test_gradient_weight_sweep():
    rows = gradient_weight_sweep([2], [0.99])
    assert rows[0]["tbce_weight"] == pytest.approx(1.99)
    assert rows[0]["bce_weight"] == pytest.approx(100.0)
    tiny = gradient_weight_sweep([3], [1e-9])[0]
    assert tiny["tbce_weight"] == pytest.approx(1.0) and tiny["bce_weight"] == pytest.approx(1.0)
    grid = np.linspace(0.05, 0.95, 19)
    table = gradient_weight_sweep(range(1, 7), grid)
    for f in grid:
        ws = [r["tbce_weight"] for r in table if r["f"] == f]
        assert all(a < b for a, b in zip(ws, ws[1:]))
        assert all(r["tbce_weight"] < r["bce_weight"] for r in table if r["f"] == f)
    with pytest.raises(ValueError):
        gradient_weight_sweep([2], [0.0])


# ---------------------------------------------------------------- risk bounds

def test_always_reject_on_four_atoms():
    space = DiscreteToySpace([0.4, 0.3, 0.2, 0.1], [0.1, 0.1, 0.3, 0.5], pi=0.7)
    f = np.zeros(4)
    rep = check_bounds_discrete(space, f, 2)
    # negative-branch loss vanishes at f = 0, so both risks reduce to the positive term
    assert rep.risk_u == rep.risk_pu == pytest.approx(0.5 * -math.log(1e-7))
    assert rep.observed_gap == 0.0 and rep.holds


def test_no_contamination_means_equal_risks(rng):
    space = DiscreteToySpace.random(6, rng, pi=0.0)
    f = rng.uniform(size=6)
    assert risk_u_atoms(space, f, 3) == risk_pu_atoms(space, f, 3)
    assert check_bounds_discrete(space, f, 3).bound == 0.0


def test_gap_identity(rng):
    # R_pu - R_u = pi/2 * (E_k[L(f,0)] - E_u[L(f,0)])
    for _ in range(20):
        space = DiscreteToySpace.random(8, rng)
        f = rng.uniform(size=8)
        l0 = tbce_loss(f, 0, 2)[0]
        expected = 0.5 * space.pi * (space.p_known @ l0 - space.p_unknown @ l0)
        assert risk_pu_atoms(space, f, 2) - risk_u_atoms(space, f, 2) == pytest.approx(expected, abs=1e-12)


def test_separable_minimizer_matches_full_enumeration(rng):
    levels = quantized_levels(5)
    for which in ("u", "pu"):
        space = DiscreteToySpace.random(4, rng)
        risk = risk_u_atoms if which == "u" else risk_pu_atoms
        best = min(risk(space, np.array(tbl), 2) for tbl in itertools.product(levels, repeat=4))
        f = exhaustive_minimizer(space, 2, which, n_levels=5)
        assert risk(space, f, 2) == pytest.approx(best, abs=1e-12)


def test_random_tables_never_violate(rng):
    levels = quantized_levels()
    for _ in range(300):
        K = int(rng.integers(2, 13))
        space = DiscreteToySpace.random(K, rng)
        t = int(rng.integers(1, 4))
        rep = check_bounds_discrete(space, rng.choice(levels, size=K), t)
        assert rep.holds, rep


def test_monte_carlo_check():
    spec = synthetic_spec(seed=1)
    w = np.random.default_rng(0).standard_normal(spec.dim)

    def f(X):
        return 1.0 / (1.0 + np.exp(-(X @ w) / 5))

    rep = check_bounds_mc(spec, f, 2, n_mc=4000)
    assert rep.holds and rep.bound == pytest.approx(0.6 * 1.5 / 2)
    head = check_bounds_mc(spec, f, 2, n_mc=4000, head=1)
    assert head.holds and head.pi == pytest.approx(0.2)
    with pytest.raises(UnsupportedModeError):
        check_bounds_mc(None, f, 2)
