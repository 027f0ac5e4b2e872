"""Tests for the classifier family."""

import numpy as np
import pandas as pd
import pytest

from cough_toolbox.classifiers import (
    ClassifierError, ConvergenceError, DimensionMismatchError, LabeledSet, LdaParams, LogRegParams,
    MlpParams, Standardizer, SvmParams, check_gradient, decision_function, expand_grid,
    export_weights_csv, init_mlp, kernel_matrix, load_model, logreg_objective_and_gradient,
    mlp_activation_pattern, mlp_objective_and_gradient, predict, save_model, smo_solve, train,
    train_lda, train_logreg, train_mlp, train_svm,
)


def blobs(seed=0, n_per=20, dim=4, spread=6.0):
    """Three separated Gaussian classes."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((3, dim)) * spread
    X = np.vstack([c + rng.standard_normal((n_per, dim)) for c in centers])
    y = np.repeat(np.arange(3), n_per)
    return LabeledSet(X, y, class_names=["a", "b", "c"])


def accuracy(model, data):
    return float(np.mean(predict(model, data.X).labels == data.y))


@pytest.fixture
def data():
    return blobs()


class TestLabeledSet:
    """Test cases for labeled training sets."""

    def test_infers_classes(self):
        """K comes from the class names when given."""
        assert LabeledSet(np.zeros((2, 3)), [0, 1], class_names=["x", "y"]).n_classes == 2

    def test_missing_class(self):
        """Every class needs at least one row."""
        with pytest.raises(ClassifierError):
            LabeledSet(np.zeros((2, 3)), [0, 2])

    def test_non_finite(self):
        """NaN features are rejected."""
        X = np.zeros((2, 2))
        X[0, 0] = np.nan
        with pytest.raises(ClassifierError):
            LabeledSet(X, [0, 1])

    def test_shape_mismatch(self):
        """Rows and labels must agree."""
        with pytest.raises(ClassifierError):
            LabeledSet(np.zeros((3, 2)), [0, 1])

    def test_subset_keeps_classes(self, data):
        """A subset keeps K and the class names."""
        part = data.subset([0, 25, 45])
        assert part.n_classes == 3
        assert part.class_names == ["a", "b", "c"]

    def test_single_class_cannot_train(self):
        """Training needs two classes."""
        with pytest.raises(ClassifierError):
            train("logreg", LabeledSet(np.ones((4, 2)), [0, 0, 0, 0]))


class TestStandardizer:
    """Test cases for z-scoring."""

    def test_zero_mean_unit_std(self, data):
        Z = Standardizer().fit(data.X).transform(data.X)
        assert np.allclose(Z.mean(axis=0), 0.0)
        assert np.allclose(Z.std(axis=0), 1.0)

    def test_constant_column(self):
        """Constant columns are centered, not divided by zero."""
        X = np.column_stack([np.full(5, 2.0), np.arange(5.0)])
        Z = Standardizer().fit(X).transform(X)
        assert np.all(Z[:, 0] == 0.0)

    def test_not_fitted(self):
        with pytest.raises(ClassifierError):
            Standardizer().transform(np.zeros((1, 2)))

    def test_restored_statistics(self, data):
        """Stored mean and scale rebuild an equivalent scaler."""
        fitted = Standardizer().fit(data.X)
        back = Standardizer(fitted.mean, fitted.scale)
        assert np.array_equal(back.transform(data.X), fitted.transform(data.X))
        assert np.allclose(fitted.scale, data.X.std(axis=0))

    def test_no_rows(self, data):
        assert Standardizer().fit(data.X).transform(np.zeros((0, 4))).shape == (0, 4)


class TestLogReg:
    """Test cases for logistic regression."""

    def test_separable_training_accuracy(self, data):
        """Separated blobs are learned exactly."""
        model = train_logreg(data, LogRegParams(reg_c=100.0, l2=1.0))
        assert accuracy(model, data) == 1.0

    def test_probabilities(self, data):
        """Probabilities are rows summing to one."""
        model = train_logreg(data, LogRegParams(l2=1.0))
        probs = predict(model, data.X).probabilities
        assert probs.shape == (60, 3)
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_objective_non_increasing(self, data):
        """Backtracking never raises the objective."""
        history = np.asarray(train_logreg(data, LogRegParams(l1=0.5, l2=0.5, max_iter=200)).history)
        assert np.all(np.diff(history) <= 1e-9 * np.abs(history[:-1]))

    def test_strong_l1_zeroes_weights(self, data):
        """A large l1 penalty shrinks every weight to exactly zero."""
        model = train_logreg(data, LogRegParams(reg_c=1.0, l1=1e6))
        assert np.all(model.params["W"] == 0.0)

    def test_gradient(self):
        """The analytic gradient matches central differences."""
        rng = np.random.default_rng(1)
        X, y = rng.standard_normal((5, 4)), np.array([0, 1, 2, 0, 1])
        params = {"W": rng.standard_normal((4, 3)), "b": rng.standard_normal(3)}
        err = check_gradient(lambda p: logreg_objective_and_gradient(p, X, y, 10.0, 0.3, 0.7), params)
        assert err < 1e-5

    def test_invalid_c(self, data):
        with pytest.raises(ClassifierError):
            train_logreg(data, LogRegParams(reg_c=0.0))

    def test_budget_exhaustion_is_not_an_error(self, data):
        """Stopping at max_iter still returns a model."""
        model = train_logreg(data, LogRegParams(max_iter=2))
        assert len(model.history) == 3


class TestLda:
    """Test cases for the shared-covariance discriminant."""

    def test_training_accuracy(self, data):
        assert accuracy(train_lda(data), data) == 1.0

    def test_duplicating_rows_changes_nothing(self, data):
        """The pooled covariance divides by n, so doubled data gives the same model."""
        doubled = LabeledSet(np.vstack([data.X, data.X]), np.concatenate([data.y, data.y]), 3)
        a, b = train_lda(data), train_lda(doubled)
        assert np.allclose(a.params["coef"], b.params["coef"])
        assert np.allclose(a.params["intercept"], b.params["intercept"])

    def test_priors(self, data):
        """Class priors are the training frequencies."""
        assert np.allclose(train_lda(data).params["priors"], 1 / 3)

    def test_too_few_rows(self):
        with pytest.raises(ClassifierError):
            train_lda(LabeledSet(np.array([[0.0], [1.0]]), [0, 1]))

    def test_no_probabilities(self, data):
        assert predict(train_lda(data, LdaParams()), data.X).probabilities is None

    def test_matches_mahalanobis_rule(self):
        """Overlapping, unbalanced classes: labels equal argmin of Mahalanobis distance minus log prior."""
        rng = np.random.default_rng(4)
        counts = [30, 20, 10]
        centers = rng.standard_normal((3, 3)) * 1.5
        mixing = rng.standard_normal((3, 3))
        X = np.vstack([c + rng.standard_normal((m, 3)) @ mixing for c, m in zip(centers, counts)])
        y = np.repeat(np.arange(3), counts)
        model = train_lda(LabeledSet(X, y), LdaParams(shrinkage=0.0, standardize=False))

        means = [X[y == k].mean(axis=0) for k in range(3)]
        scatter = sum((X[y == k] - means[k]).T @ (X[y == k] - means[k]) for k in range(3))
        precision = np.linalg.inv(scatter / len(X))
        queries = np.vstack([X, rng.uniform(-6.0, 6.0, size=(200, 3))])
        cost = np.column_stack([
            0.5 * np.einsum("ij,jk,ik->i", queries - means[k], precision, queries - means[k])
            - np.log(counts[k] / len(X))
            for k in range(3)
        ])
        expected = np.argmin(cost, axis=1)
        assert len(np.unique(expected)) == 3
        assert np.array_equal(predict(model, queries).labels, expected)


class TestSvm:
    """Test cases for SMO and one-vs-rest SVMs."""

    def test_rbf_kernel_diagonal(self):
        """RBF kernels have ones on the diagonal."""
        A = np.random.default_rng(0).standard_normal((5, 3))
        assert np.allclose(np.diag(kernel_matrix(A, A, "rbf", 0.5)), 1.0)

    def test_unknown_kernel(self):
        with pytest.raises(ClassifierError):
            kernel_matrix(np.zeros((1, 1)), np.zeros((1, 1)), "poly", 1.0)

    def test_smo_constraints(self):
        """Box bounds and the equality constraint hold at the solution."""
        rng = np.random.default_rng(2)
        X = rng.standard_normal((40, 2))
        y = np.where(X[:, 0] + 0.3 * rng.standard_normal(40) > 0, 1.0, -1.0)
        C = 2.0
        result = smo_solve(kernel_matrix(X, X, "rbf", 0.5), y, C)
        assert result.gap <= 1e-3
        assert abs(result.beta.sum()) < 1e-9
        assert np.all(y * result.beta >= -1e-12)
        assert np.all(y * result.beta <= C + 1e-12)

    def test_smo_separates_linear_problem(self):
        """A separable problem is classified correctly by its own decision function."""
        rng = np.random.default_rng(3)
        X = np.vstack([rng.standard_normal((15, 2)) + 4.0, rng.standard_normal((15, 2)) - 4.0])
        y = np.repeat([1.0, -1.0], 15)
        K = kernel_matrix(X, X, "linear", 1.0)
        result = smo_solve(K, y, 10.0)
        scores = K @ result.beta + result.bias
        assert np.all(np.sign(scores) == y)

    def test_smo_budget(self):
        """Exhausting the update budget raises instead of returning a partial model."""
        rng = np.random.default_rng(4)
        X = rng.standard_normal((30, 2))
        y = np.where(rng.uniform(size=30) > 0.5, 1.0, -1.0)
        with pytest.raises(ConvergenceError):
            smo_solve(kernel_matrix(X, X, "rbf", 1.0), y, 10.0, max_iter=1)

    def test_training_accuracy(self, data):
        model = train_svm(data, SvmParams(reg_c=10.0, gamma=0.1))
        assert accuracy(model, data) == 1.0
        assert predict(model, data.X).probabilities is None

    def test_support_vectors_are_training_rows(self, data):
        """Stored support vectors are a subset of the standardized rows."""
        model = train_svm(data, SvmParams(reg_c=1.0, gamma=0.1))
        sv = model.params["support_vectors"]
        assert 0 < sv.shape[0] <= len(data)
        assert model.params["beta"].shape == (3, sv.shape[0])

    def test_invalid_gamma(self, data):
        with pytest.raises(ClassifierError):
            train_svm(data, SvmParams(gamma=0.0))


class TestMlp:
    """Test cases for the one-hidden-layer network."""

    def test_training_accuracy(self, data):
        model = train_mlp(data, MlpParams(hidden=16, epochs=100, learning_rate=0.01, batch_size=16))
        assert accuracy(model, data) >= 0.95

    def test_deterministic(self, data):
        """Same data, hyperparameters and seed give identical weights."""
        hp = MlpParams(hidden=8, epochs=5, batch_size=16)
        a, b = train_mlp(data, hp, seed=3), train_mlp(data, hp, seed=3)
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])

    def test_gradient(self):
        """The analytic gradient matches central differences away from ReLU switches."""
        rng = np.random.default_rng(5)
        X, y = rng.standard_normal((4, 3)), np.array([0, 1, 2, 1])
        params = init_mlp(3, 5, 3, rng)
        params["b1"] += 0.1
        err = check_gradient(
            lambda p: mlp_objective_and_gradient(p, X, y, 0.5),
            params,
            pattern=lambda p: mlp_activation_pattern(p, X),
        )
        assert err < 1e-4

    def test_invalid_hidden(self, data):
        with pytest.raises(ClassifierError):
            train_mlp(data, MlpParams(hidden=0))


class TestDispatchAndStorage:
    """Test cases for dispatch, grids and model files."""

    def test_expand_grid_order(self):
        """Fields are sorted by name and combined row-major."""
        grid = expand_grid("svm", reg_c=[1.0, 100.0], gamma=[0.01, 0.1])
        assert [(g.gamma, g.reg_c) for g in grid] == [(0.01, 1.0), (0.01, 100.0), (0.1, 1.0), (0.1, 100.0)]

    def test_expand_grid_unknown_field(self):
        with pytest.raises(ClassifierError):
            expand_grid("lda", depth=[1])

    def test_wrong_params_type(self, data):
        with pytest.raises(ClassifierError):
            train("svm", data, LogRegParams())

    def test_unknown_kind(self, data):
        with pytest.raises(ClassifierError):
            train("forest", data)

    @pytest.mark.parametrize("kind", ["logreg", "lda", "svm", "mlp"])
    def test_save_load_predicts_identically(self, kind, data, tmp_path):
        """A reloaded model gives the same labels and scores up to rounding."""
        model = train(kind, data, seed=1)
        back = load_model(save_model(tmp_path / f"{kind}.clsm", model))
        assert back.kind == kind
        assert back.fingerprint == data.fingerprint()
        assert np.array_equal(predict(back, data.X).labels, predict(model, data.X).labels)
        assert np.allclose(decision_function(back, data.X), decision_function(model, data.X), rtol=0.0, atol=1e-12)

    def test_dimension_mismatch(self, data):
        model = train("lda", data)
        with pytest.raises(DimensionMismatchError):
            predict(model, np.zeros((2, 5)))

    def test_empty_input(self, data):
        """Zero rows give zero labels."""
        model = train("svm", data)
        assert predict(model, np.zeros((0, 4))).labels.shape == (0,)

    def test_export_weights(self, data, tmp_path):
        """Every parameter value appears once in the long-format CSV."""
        model = train("logreg", data)
        frame = pd.read_csv(export_weights_csv(tmp_path / "w.csv", model))
        assert list(frame.columns) == ["parameter", "row", "col", "value"]
        assert len(frame) == sum(v.size for v in model.params.values())
        assert set(frame["parameter"]) == {"W", "b"}
