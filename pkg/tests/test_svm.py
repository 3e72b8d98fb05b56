import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import blobs
from oracles import dual_fista, kkt_residual
from rfidar import svm
from rfidar.evaluation import kfold_cv
from rfidar.features import FeatureVector
from rfidar.svm import (
    FingerprintMismatch,
    InstanceSet,
    ModelFormatError,
    ModelVersionError,
    SvmParams,
    _KernelRows,
    apply_scaler,
    default_gamma,
    dual_objective,
    dumps_model,
    fit_scaler,
    loads_model,
    predict,
    predict_many,
    rbf_kernel,
    rbf_matrix,
    smo_solve,
    smo_train_binary,
    train,
)


def small_problem(rng, n_max=10):
    n = int(rng.integers(4, n_max + 1))
    X = rng.normal(size=(n, 2))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[:2] = [1.0, -1.0]
    C = float(rng.choice([0.5, 1.0, 10.0]))
    gamma = float(rng.choice([0.5, 1.0, 2.0]))
    return X, y, C, gamma


def full_alpha(clf, n):
    a = np.zeros(n)
    a[clf.sv_index] = clf.alpha
    return a


# -- kernel and scaler ----------------------------------------------------------

def test_rbf_kernel_values():
    assert rbf_kernel([1.0, 2.0], [1.0, 2.0], 3.0) == 1.0
    assert rbf_kernel([0, 0], [1, 1], 0.5) == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert rbf_kernel([0, 0], [5, 5], 1e-12) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rbf_kernel([0, 0], [0, 0, 0], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_gram_is_psd(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 5))
    K = rbf_matrix(X, X, float(rng.uniform(0.05, 2.0)))
    assert np.allclose(K, K.T) and np.all(K > 0) and np.all(K <= 1.0)
    np.linalg.cholesky(K + 1e-10 * np.eye(20))


def test_scaler_rules():
    stats = fit_scaler(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0
    out = apply_scaler(stats, np.array([[3.0, 7.0]]))
    assert out[0, 0] == 1.0 and out[0, 1] == 0.0
    with pytest.raises(ValueError):
        apply_scaler(stats, np.zeros((1, 3)))


@given(st.integers(0, 2**31))
def test_scaled_training_set_is_standardised(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(3.0, 5.0, size=(30, 6))
    X[:, 2] = 7.0
    Xs = apply_scaler(fit_scaler(X), X)
    assert np.allclose(Xs.mean(axis=0), 0, atol=1e-9)
    sd = Xs.std(axis=0)
    assert np.allclose(sd[[0, 1, 3, 4, 5]], 1, atol=1e-9) and sd[2] == 0


def test_default_gamma_is_inverse_dimension_after_scaling():
    X = np.random.default_rng(0).normal(size=(50, 8))
    assert default_gamma(apply_scaler(fit_scaler(X), X)) == pytest.approx(1 / 8)


# -- binary SMO ---------------------------------------------------------------

def test_symmetric_pair():
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    clf = smo_train_binary(X, [0, 1], C=10.0, gamma=0.5)
    assert clf.alpha[0] == pytest.approx(clf.alpha[1])
    assert clf.decision(X, [[0.0, 0.0]], 0.5)[0] == pytest.approx(0.0, abs=1e-9)
    assert clf.decision(X, [[-1.0, 0.0]], 0.5)[0] > 0


def test_xor_fits_exactly():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    y = np.array([0, 0, 1, 1])
    clf = smo_train_binary(X, y, C=100.0, gamma=1.0)
    pred = np.where(clf.decision(X, X, 1.0) > 0, 0, 1)
    assert np.array_equal(pred, y)


def test_single_class_and_nonfinite_rejected():
    with pytest.raises(ValueError):
        smo_train_binary(np.zeros((3, 2)), [1, 1, 1])
    with pytest.raises(ValueError):
        smo_train_binary(np.array([[np.nan, 0], [1, 1]]), [0, 1])


def test_dual_objective_matches_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        X, y, C, gamma = small_problem(rng)
        K = rbf_matrix(X, X, gamma)
        res = smo_solve(_KernelRows(X, gamma), y, C, tol=1e-6)
        ref = dual_fista(K, y, C)
        assert dual_objective(res.alpha, y, K) == pytest.approx(dual_objective(ref, y, K),
                                                                abs=1e-6)
        assert res.objective == pytest.approx(dual_objective(res.alpha, y, K), abs=1e-9)


def test_kkt_residual_within_default_tol():
    rng = np.random.default_rng(7)
    for _ in range(25):
        X, y, C, gamma = small_problem(rng)
        res = smo_solve(_KernelRows(X, gamma), y, C)
        K = rbf_matrix(X, X, gamma)
        assert kkt_residual(res.alpha, y, K, res.bias, C) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_binary_invariants(seed):
    rng = np.random.default_rng(seed)
    X, y, C, gamma = small_problem(rng, 14)
    clf = smo_train_binary(X, (y < 0).astype(int), C=C, gamma=gamma)
    a = full_alpha(clf, len(y))
    assert np.all(a >= 0) and np.all(a <= C)
    assert abs(a @ y) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_tighter_tol_never_lowers_objective(seed):
    rng = np.random.default_rng(seed)
    X, y, C, gamma = small_problem(rng, 12)
    K = rbf_matrix(X, X, gamma)
    loose = smo_solve(_KernelRows(X, gamma), y, C, tol=1e-1)
    tight = smo_solve(_KernelRows(X, gamma), y, C, tol=1e-5)
    assert dual_objective(tight.alpha, y, K) >= dual_objective(loose.alpha, y, K) - 1e-12


def test_row_cache_matches_full_gram():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 4))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=60) > 0, 1.0, -1.0)
    full = smo_solve(_KernelRows(X, 0.5), y, 1.0)
    rows = _KernelRows(X, 0.5, cache_rows=4)
    rows.gram = None  # force on-demand rows through a tiny LRU cache
    lazy = smo_solve(rows, y, 1.0)
    assert np.allclose(full.alpha, lazy.alpha, atol=1e-9)


# -- multi-class --------------------------------------------------------------

def blob_set(n=20, k=2, d=5, sigma=0.1, sep=10.0, seed=0):
    centers = [np.eye(d)[i % d] * sep * (1 + i // d) for i in range(k)]
    X, y = blobs(n, centers, sigma, seed)
    return InstanceSet(X, y, "fp", [f"c{i}" for i in range(k)])


def test_pair_count_and_votes():
    inst = blob_set(n=12, k=8, d=8, sigma=0.5)
    model = train(inst)
    assert len(model.classifiers) == 28
    labels, votes = predict_many(model, inst.X)
    assert np.all(votes.sum(axis=1) == 28)
    assert np.array_equal(labels, inst.y)


def test_blobs_cross_validate_perfectly():
    assert kfold_cv(blob_set(), 10, 0).accuracy == 1.0


def test_leave_one_out_on_blobs():
    inst = blob_set(n=10)
    assert kfold_cv(inst, len(inst) // 2, 0).accuracy == 1.0


def test_two_class_follows_decision_sign():
    inst = blob_set(k=2)
    model = train(inst)
    dec = svm.decision_values(model, inst.X)[:, 0]
    labels, _ = predict_many(model, inst.X)
    assert np.array_equal(labels, np.where(dec >= 0, 0, 1))


def test_vote_tie_break():
    # three classes in a cycle of pairwise wins: each gets one vote
    inst = blob_set(n=5, k=3, d=3)
    model = train(inst)
    dec = np.array([[1.0, -0.5, 2.0]])  # pairs (0,1), (0,2), (1,2)
    labels, votes = svm._vote(model, dec)
    assert list(votes[0]) == [1, 1, 1]
    # summed |decision|: class 0 -> 1.0, class 1 -> 2.0, class 2 -> 0.5
    assert labels[0] == 1
    labels, _ = svm._vote(model, np.array([[1.0, -1.0, 1.0]]))
    assert labels[0] == 0


def test_train_errors():
    inst = blob_set(k=3)
    with pytest.raises(ValueError, match="c2"):
        train(inst.subset(np.flatnonzero(inst.y < 2)))
    pairs = [(FeatureVector(np.zeros(3), "a"), 0), (FeatureVector(np.ones(3), "b"), 1)]
    with pytest.raises(FingerprintMismatch):
        train(pairs)


def test_predict_checks_fingerprint_and_finiteness():
    inst = blob_set()
    model = train(inst)
    with pytest.raises(FingerprintMismatch):
        predict(model, FeatureVector(inst.X[0], "other"))
    with pytest.raises(ValueError):
        predict_many(model, np.full((1, 5), np.inf))
    a = predict(model, FeatureVector(inst.X[3], "fp"))
    b = predict(model, FeatureVector(inst.X[3], "fp"))
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_large_training_uses_row_provider(monkeypatch):
    monkeypatch.setattr(svm, "FULL_GRAM_LIMIT", 10)
    monkeypatch.setattr(svm, "PAIR_GRAM_LIMIT", 10)
    inst = blob_set(n=15, k=3)
    model = train(inst)
    assert np.array_equal(predict_many(model, inst.X)[0], inst.y)


# -- persistence --------------------------------------------------------------

@pytest.fixture(scope="module")
def saved_model():
    inst = blob_set(n=15, k=4, sigma=2.0, seed=3)
    return train(inst, SvmParams(C=5.0), {"note": "x"})


def test_save_load_roundtrip(saved_model, tmp_path):
    path = tmp_path / "m.bin"
    svm.save_model(saved_model, path)
    loaded = svm.load_model(path)
    X = np.random.default_rng(0).normal(0, 8, size=(100, 5))
    a, va = predict_many(saved_model, X)
    b, vb = predict_many(loaded, X)
    assert np.array_equal(a, b) and np.array_equal(va, vb)
    assert np.array_equal(svm.decision_values(saved_model, X), svm.decision_values(loaded, X))
    assert loaded.metadata == {"note": "x"}
    assert loaded.class_names == saved_model.class_names


def test_serialisation_is_deterministic(saved_model):
    assert dumps_model(saved_model) == dumps_model(loads_model(dumps_model(saved_model)))


def test_version_bump_rejected(saved_model):
    data = bytearray(dumps_model(saved_model))
    data[8] += 1  # u16 version follows the 8-byte magic
    with pytest.raises(ModelVersionError):
        loads_model(bytes(data))


def test_truncated_and_corrupt_rejected(saved_model):
    data = dumps_model(saved_model)
    with pytest.raises(ModelFormatError):
        loads_model(data[:-100])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(ModelFormatError):
        loads_model(bytes(flipped))
    with pytest.raises(ModelFormatError):
        loads_model(b"NOTAMODEL" + data[9:])
