import numpy as np
import pytest

from dfcvae.classifier import (
    AccuracyReport,
    accuracy,
    check_disjoint,
    evaluate,
    load_classifiers,
    save_classifiers,
    train_attribute_classifiers,
    train_linear_svm,
)
from dfcvae.errors import ContractError, DataError


def blobs(n=200, sep=10.0, d=2, seed=0):
    """Two unit-variance Gaussian blobs whose means are ``sep`` sigma apart."""
    rng = np.random.default_rng(seed)
    direction = np.zeros(d)
    direction[0] = sep / 2
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    x = rng.normal(size=(n, d)) + y[:, None] * direction
    return x, y


class TestTrain:
    def test_separable_toy_set(self):
        x, y = blobs()
        # brute-force separability check: the first coordinate alone splits the blobs
        assert ((x[:, 0] > 0) == (y == 1)).all()
        clf = train_linear_svm(x, y)
        assert accuracy(clf.predict(x), y) == 100.0

    def test_label_flip_negates(self):
        x, y = blobs(seed=1)
        a = train_linear_svm(x, y)
        b = train_linear_svm(x, -y)
        assert (np.sign(a.decision_function(x)) == -np.sign(b.decision_function(x))).all()
        assert np.allclose(a.weight, -b.weight, atol=1e-12)

    def test_huge_lambda_shrinks_weights(self):
        x, y = blobs(seed=2)
        clf = train_linear_svm(x, y, lam=1e6)
        assert np.linalg.norm(clf.weight) < 1e-2

    def test_single_class_is_error(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(ContractError, match="single class"):
            train_linear_svm(x, np.ones(10), name="Bald")

    @pytest.mark.parametrize(
        "x,y",
        [
            (np.zeros((1, 2)), np.ones(1)),
            (np.zeros((4, 2)), np.array([1, -1, 0, 1])),
            (np.zeros((4, 2)), np.array([1, -1, 1])),
        ],
    )
    def test_bad_inputs(self, x, y):
        with pytest.raises(ContractError):
            train_linear_svm(x, y)

    def test_deterministic(self):
        x, y = blobs(d=5, sep=1.0, seed=3)
        a, b = train_linear_svm(x, y, seed=7), train_linear_svm(x, y, seed=7)
        assert np.array_equal(a.weight, b.weight) and a.bias == b.bias
        c = train_linear_svm(x, y, seed=8)
        assert not np.array_equal(a.weight, c.weight)

    def test_zero_variance_dim_dropped(self):
        x, y = blobs(d=3, seed=4)
        x[:, 1] = 5.0
        clf = train_linear_svm(x, y)
        assert clf.dropped_dims == [1]
        assert (clf.std > 0).all() and clf.weight.shape == (2,)
        assert accuracy(clf.predict(x), y) == 100.0

    def test_shift_invariance(self):
        x, y = blobs(d=4, sep=2.0, seed=5)
        test, _ = blobs(d=4, sep=2.0, seed=6)
        a = train_linear_svm(x, y)
        shift = np.array([0.0, 0.0, 123.0, 0.0])
        b = train_linear_svm(x + shift, y)
        assert np.allclose(a.decision_function(test), b.decision_function(test + shift), atol=1e-8)
        assert np.array_equal(a.predict(test), b.predict(test + shift))

    def test_vectorized_matches_single(self):
        # every column sees the same sample order, so joint training is exact
        rng = np.random.default_rng(7)
        x = rng.normal(size=(60, 4))
        labels = np.where(rng.normal(size=(60, 3)) + x[:, :3] > 0, 1, -1)
        joint = train_attribute_classifiers(x, labels, ["a", "b", "c"], seed=1)
        for j, clf in enumerate(joint):
            alone = train_linear_svm(x, labels[:, j], seed=1, name=clf.attribute_name)
            assert np.allclose(clf.weight, alone.weight, atol=1e-12)
            assert clf.bias == pytest.approx(alone.bias, abs=1e-12)


class TestEvaluate:
    def test_perfect_predictor(self):
        x, y = blobs()
        clf = train_linear_svm(x, y, name="Male")
        report = evaluate([clf], x, y)
        assert report.accuracies == {"Male": 100.0}

    def test_random_predictor_near_fifty(self):
        rng = np.random.default_rng(8)
        truth = np.where(np.arange(20_000) % 2 == 0, 1, -1)
        guess = rng.choice([-1, 1], size=20_000)
        assert abs(accuracy(guess, truth) - 50.0) < 2.0

    def test_average_and_csv(self, tmp_path):
        report = AccuracyReport({f"a{i}": float(50 + i) for i in range(40)})
        assert abs(report.average - np.mean([50 + i for i in range(40)])) < 1e-9
        path = str(tmp_path / "r.csv")
        report.to_csv(path)
        lines = open(path).read().splitlines()
        assert lines[0] == "attribute,accuracy"
        assert lines[-1] == "Average,69.5000"
        assert AccuracyReport.from_csv(path).accuracies == report.accuracies

    def test_overlap_rejected(self):
        with pytest.raises(DataError):
            check_disjoint(["a", "b"], ["b", "c"])
        check_disjoint(["a"], ["b"])

    def test_column_count_mismatch(self):
        x, y = blobs()
        clf = train_linear_svm(x, y)
        with pytest.raises(ContractError):
            evaluate([clf, clf], x, y)


def test_save_load_round_trip(tmp_path):
    x, y = blobs(d=3, seed=9)
    x[:, 2] = 1.0
    clfs = train_attribute_classifiers(x, np.stack([y, -y], 1), ["Male", "Eyeglasses"], lam=1e-3, epochs=3, seed=4)
    path = str(tmp_path / "c.safetensors")
    save_classifiers(clfs, path)
    loaded = load_classifiers(path)
    assert [c.attribute_name for c in loaded] == ["Male", "Eyeglasses"]
    for a, b in zip(clfs, loaded):
        assert np.array_equal(a.decision_function(x), b.decision_function(x))
        assert (b.lam, b.epochs, b.seed) == (1e-3, 3, 4)
        assert b.dropped_dims == [2]
