"""Ensembling: weight normalization, probability averaging, manifests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conssent import ensemble as E
from conssent.errors import DataError, UsageError


# ---------------------------------------------------------------------------
# normalize_weights
# ---------------------------------------------------------------------------


def test_normalize_frozen_example():
    w = E.normalize_weights((0.8, 0.6))
    assert w == pytest.approx((0.8 / 1.4, 0.6 / 1.4), abs=1e-15)
    assert w[0] == pytest.approx(0.5714285714285715)
    assert w[1] == pytest.approx(0.42857142857142855)


def test_normalize_degenerate_keeps_single_winner():
    assert E.normalize_weights((1.0, 0.0)) == (1.0, 0.0)


def test_normalize_sums_to_one():
    w = E.normalize_weights((0.3, 0.3, 0.4))
    assert sum(w) == pytest.approx(1.0, abs=1e-15)
    assert w == pytest.approx((0.3, 0.3, 0.4))


def test_normalize_rejects_bad_input():
    with pytest.raises(E.AllZero):
        E.normalize_weights((0.0, 0.0))
    with pytest.raises(UsageError):
        E.normalize_weights((-0.1, 0.5))
    with pytest.raises(UsageError):
        E.normalize_weights(())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=8)
       .filter(lambda s: sum(s) > 1e-9))
def test_normalize_property(scores):
    w = E.normalize_weights(scores)
    assert all(x >= 0 for x in w)
    assert sum(w) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# ensemble_predict
# ---------------------------------------------------------------------------


def test_degenerate_weights_reproduce_single_member():
    rng = np.random.default_rng(0)
    probs = [rng.dirichlet(np.ones(4), size=20) for _ in range(3)]
    preds = E.ensemble_predict(probs, (1.0, 0.0, 0.0))
    assert np.array_equal(preds, np.argmax(probs[0], axis=1))


def test_agreement_wins():
    a = np.array([0.1, 0.9])
    b = np.array([0.2, 0.8])
    assert E.ensemble_predict([a, b], (0.5, 0.5)) == 1


def test_tie_breaks_to_lowest_class():
    a = np.array([0.5, 0.5, 0.0])
    b = np.array([0.5, 0.5, 0.0])
    assert E.ensemble_predict([a, b], (0.5, 0.5)) == 0
    c = np.array([0.0, 0.5, 0.5])
    assert E.ensemble_predict([c, c], (0.5, 0.5)) == 1


def test_weighted_average_is_valid_distribution():
    rng = np.random.default_rng(1)
    probs = [rng.dirichlet(np.ones(5), size=30) for _ in range(4)]
    w = E.normalize_weights((0.9, 0.7, 0.8, 0.6))
    avg = E.ensemble_probs(probs, w)
    assert np.all(avg >= 0)
    assert np.allclose(avg.sum(axis=1), 1.0, atol=1e-12)


def test_member_permutation_invariance():
    rng = np.random.default_rng(2)
    probs = [rng.dirichlet(np.ones(3), size=25) for _ in range(3)]
    scores = (0.9, 0.6, 0.75)
    base = E.ensemble_probs(probs, E.normalize_weights(scores))
    perm = [2, 0, 1]
    permuted = E.ensemble_probs([probs[i] for i in perm],
                                E.normalize_weights([scores[i] for i in perm]))
    assert np.allclose(base, permuted, atol=1e-15)


def test_arity_mismatch_raises():
    with pytest.raises(E.ArityMismatch):
        E.ensemble_predict([np.array([0.5, 0.5]), np.array([0.3, 0.3, 0.4])],
                           (0.5, 0.5))


def test_weight_count_mismatch_raises():
    with pytest.raises(UsageError):
        E.ensemble_predict([np.array([0.5, 0.5])], (0.5, 0.5))


def test_ensemble_accuracy():
    # two confident-but-sometimes-wrong members; ensemble accuracy is the
    # fraction where the weighted vote lands on the true label
    labels = np.array([0, 1, 0, 1])
    m1 = np.array([[0.9, 0.1], [0.2, 0.8], [0.4, 0.6], [0.1, 0.9]])
    m2 = np.array([[0.8, 0.2], [0.3, 0.7], [0.9, 0.1], [0.6, 0.4]])
    acc = E.ensemble_accuracy([m1, m2], (0.5, 0.5), labels)
    avg = 0.5 * m1 + 0.5 * m2
    assert acc == float(np.mean(np.argmax(avg, axis=1) == labels))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=5), st.integers(min_value=2, max_value=6),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_property_average_stays_simplex(n_members, n_classes, seed):
    rng = np.random.default_rng(seed)
    probs = [rng.dirichlet(np.ones(n_classes), size=7) for _ in range(n_members)]
    w = E.normalize_weights(rng.uniform(0.1, 1.0, size=n_members))
    avg = E.ensemble_probs(probs, w)
    assert np.all(avg >= 0) and np.allclose(avg.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# Spec construction and manifests
# ---------------------------------------------------------------------------


def test_spec_requires_two_members():
    with pytest.raises(UsageError):
        E.make_ensemble_spec(["only.ckpt"], {"t": (1.0,)})


def test_spec_score_arity_checked():
    with pytest.raises(UsageError):
        E.make_ensemble_spec(["a.ckpt", "b.ckpt"], {"t": (1.0, 0.5, 0.2)})


def test_spec_weights_derived_per_task():
    spec = E.make_ensemble_spec(
        ["a.ckpt", "b.ckpt"],
        {"task1": (0.8, 0.6), "task2": (0.5, 0.5)},
    )
    assert spec.weights["task1"] == pytest.approx((0.8 / 1.4, 0.6 / 1.4))
    assert spec.weights["task2"] == (0.5, 0.5)


def test_manifest_round_trip(tmp_path):
    spec = E.make_ensemble_spec(
        ["m1.ckpt", "m2.ckpt", "m3.ckpt"],
        {"probe": (0.9, 0.85, 0.8)},
    )
    path = tmp_path / "manifest.json"
    E.write_manifest(path, spec)
    back = E.read_manifest(path)
    assert back.checkpoints == spec.checkpoints
    assert back.valid_scores == spec.valid_scores
    assert all(back.weights[t] == pytest.approx(spec.weights[t])
               for t in spec.weights)


def test_manifest_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        E.read_manifest(path)
    path.write_text("{\"checkpoints\": [\"a\", \"b\"]}")
    with pytest.raises(DataError):
        E.read_manifest(path)


def test_manifest_rejects_inconsistent_weights(tmp_path):
    import json
    payload = {
        "checkpoints": ["a", "b"],
        "valid_scores": {"t": [0.8, 0.6]},
        "weights": {"t": [0.9, 0.1]},   # disagrees with the scores
    }
    path = tmp_path / "tampered.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError):
        E.read_manifest(path)
