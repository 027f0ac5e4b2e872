"""Tests for fold plans, nested search and metrics."""

import json

import numpy as np
import pandas as pd
import pytest

from cough_toolbox.classifiers import LabeledSet, LdaParams, LogRegParams
from cough_toolbox.evaluation import (
    EvaluationError, FoldError, accuracy, cohen_kappa, confusion_matrix, grid_search_cv,
    iter_nested_splits, kfold_split, read_report, sigma_acc, write_confusion_csv, write_report,
)


def blobs(seed=0, n_per=20):
    rng = np.random.default_rng(seed)
    centers = np.array([[8.0, 0.0], [0.0, 8.0], [-8.0, -8.0]])
    X = np.vstack([c + rng.standard_normal((n_per, 2)) for c in centers])
    return LabeledSet(X, np.repeat(np.arange(3), n_per), class_names=["a", "b", "c"])


@pytest.fixture
def data():
    return blobs()


class TestKfoldSplit:
    """Test cases for stratified fold plans."""

    def test_stratified_and_balanced(self):
        """Per-class and total fold sizes differ by at most one."""
        y = np.repeat([0, 1, 2], [13, 7, 21])
        plan = kfold_split(y, 5, seed=3)
        sizes = [len(f) for f in plan.folds()]
        assert max(sizes) - min(sizes) <= 1
        for cls in range(3):
            per_fold = [np.count_nonzero(y[f] == cls) for f in plan.folds()]
            assert max(per_fold) - min(per_fold) <= 1

    def test_partition(self):
        """Test folds are disjoint and cover every sample."""
        y = np.repeat([0, 1], 10)
        plan = kfold_split(y, 4)
        combined = np.concatenate(plan.folds())
        assert sorted(combined.tolist()) == list(range(20))
        for f in range(4):
            assert set(plan.train_indices(f)).isdisjoint(plan.test_indices(f))

    def test_deterministic_per_seed(self):
        y = np.repeat([0, 1], 10)
        assert np.array_equal(kfold_split(y, 5, 1).assignment, kfold_split(y, 5, 1).assignment)
        assert not np.array_equal(kfold_split(y, 5, 1).assignment, kfold_split(y, 5, 2).assignment)

    def test_small_class(self):
        """A class with fewer than k samples is rejected."""
        with pytest.raises(EvaluationError):
            kfold_split([0] * 10 + [1] * 3, 5)

    def test_k_too_small(self):
        with pytest.raises(EvaluationError):
            kfold_split([0, 1], 1)


class TestNestedSplits:
    """Test cases for outer/inner plans."""

    def test_inner_plans_cover_outer_training(self):
        y = np.repeat([0, 1, 2], 20)
        splits = list(iter_nested_splits(y, 5, 4, seed=0))
        assert [s.fold for s in splits] == [0, 1, 2, 3, 4]
        for split in splits:
            assert split.inner.assignment.shape == split.train.shape
            assert set(split.train).isdisjoint(split.test)
            assert len(split.train) + len(split.test) == 60

    def test_inner_seeds_differ_between_folds(self):
        y = np.repeat([0, 1], 20)
        seeds = {s.inner.seed for s in iter_nested_splits(y, 5, 4, seed=0)}
        assert len(seeds) == 5


class TestMetrics:
    """Test cases for accuracy, kappa, confusion and sigma."""

    def test_accuracy(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_kappa_known_value(self):
        """p_o = 0.75 and p_e = 0.5 give 0.5."""
        assert cohen_kappa([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(0.5)

    def test_kappa_single_label_agreement(self):
        """Perfect agreement on one label is 1, not a division by zero."""
        assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 1.0

    def test_kappa_chance(self):
        assert cohen_kappa([0, 0, 0, 0], [1, 1, 1, 1]) == 0.0

    def test_confusion_rows_are_truth(self):
        matrix = confusion_matrix([0, 1, 1, 2], [0, 0, 1, 2], 3)
        assert matrix.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]

    def test_confusion_out_of_range(self):
        with pytest.raises(EvaluationError):
            confusion_matrix([0, 3], [0, 1], 3)

    def test_confusion_trace_is_accuracy(self):
        """Trace over total equals accuracy on random label vectors."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            truth = rng.integers(0, 4, 30)
            pred = rng.integers(0, 4, 30)
            matrix = confusion_matrix(pred, truth, 4)
            assert np.trace(matrix) / matrix.sum() == pytest.approx(accuracy(pred, truth))

    def test_kappa_matches_agreement_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            truth = rng.integers(0, 3, 40)
            pred = np.where(rng.uniform(size=40) < 0.6, truth, rng.integers(0, 3, 40))
            p_o = np.mean(pred == truth)
            p_e = sum(np.mean(pred == c) * np.mean(truth == c) for c in range(3))
            assert cohen_kappa(pred, truth) == pytest.approx((p_o - p_e) / (1 - p_e))

    def test_sigma_is_population(self):
        assert sigma_acc([0.8, 1.0]) == pytest.approx(0.1)

    def test_sigma_needs_two_folds(self):
        with pytest.raises(EvaluationError):
            sigma_acc([0.9])

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            accuracy([0, 1], [0])

    def test_empty(self):
        with pytest.raises(EvaluationError):
            accuracy([], [])


class TestGridSearchCv:
    """Test cases for nested cross-validation."""

    def test_separable_problem(self, data):
        grid = [LogRegParams(reg_c=c, l2=1.0) for c in (1.0, 100.0)]
        report = grid_search_cv(data, "logreg", grid, seed=0)
        assert report.mean_accuracy == 1.0
        assert report.sigma_acc == 0.0
        assert np.sum(report.confusion) == 60
        assert len(report.fold_accuracies) == 5
        assert all(len(scores) == 2 for scores in report.inner_scores)
        assert report.class_names == ["a", "b", "c"]

    def test_ties_go_to_earlier_point(self, data):
        """Equal inner scores select the first grid point."""
        grid = [LdaParams(standardize=True), LdaParams(standardize=False)]
        report = grid_search_cv(data, "lda", grid, seed=1)
        assert all(s["standardize"] is True for s in report.selected)

    def test_single_point_skips_inner_search(self, data):
        report = grid_search_cv(data, "lda", [LdaParams()])
        assert report.inner_scores == [[]] * 5

    def test_workers_do_not_change_results(self, data):
        grid = [LogRegParams(reg_c=1.0), LogRegParams(reg_c=10.0)]
        a = grid_search_cv(data, "logreg", grid, seed=2, workers=1)
        b = grid_search_cv(data, "logreg", grid, seed=2, workers=3)
        assert a.to_dict() == b.to_dict()

    def test_grid_points_on_the_pool(self, data):
        """Grid points and folds dispatched on four threads give the serial report."""
        grid = [LogRegParams(reg_c=c, l2=l2) for c in (0.1, 1.0, 10.0) for l2 in (0.5, 1.0)]
        a = grid_search_cv(data, "logreg", grid, seed=5, workers=1)
        b = grid_search_cv(data, "logreg", grid, seed=5, workers=4)
        assert a.to_dict() == b.to_dict()
        assert all(len(scores) == 6 for scores in b.inner_scores)

    def test_front_end_fitted_once_per_outer_fold(self, data):
        """Inner folds reuse the outer-training features."""
        calls = []

        def front_end(train_idx, test_idx):
            calls.append(len(train_idx))
            return data.X[train_idx], data.X[test_idx], "fp"

        grid_search_cv(data, "lda", [LdaParams(standardize=True), LdaParams(standardize=False)],
                       front_end=front_end, workers=2)
        assert sorted(calls) == [48] * 5

    def test_front_end_sees_disjoint_indices(self, data):
        """The front end is fitted per fold on training indices only."""
        seen = []

        def front_end(train_idx, test_idx):
            seen.append((set(train_idx.tolist()), set(test_idx.tolist())))
            return data.X[train_idx], data.X[test_idx], "fp"

        report = grid_search_cv(data, "lda", [LdaParams()], front_end=front_end)
        assert len(seen) == 5
        assert all(tr.isdisjoint(te) for tr, te in seen)
        assert all(f["front_end"] == "fp" for f in report.fingerprints)

    def test_fold_failure_names_the_fold(self, data):
        def front_end(train_idx, test_idx):
            raise RuntimeError("boom")

        with pytest.raises(FoldError) as info:
            grid_search_cv(data, "lda", [LdaParams()], front_end=front_end)
        assert info.value.fold == 0
        assert isinstance(info.value.__cause__, RuntimeError)

    def test_empty_grid(self, data):
        with pytest.raises(EvaluationError):
            grid_search_cv(data, "lda", [])

    def test_unknown_kind(self, data):
        with pytest.raises(EvaluationError):
            grid_search_cv(data, "forest", [LdaParams()])


class TestReports:
    """Test cases for report files."""

    @pytest.fixture
    def report(self, data):
        return grid_search_cv(data, "lda", [LdaParams()], seed=4)

    def test_write_read(self, report, tmp_path):
        back = read_report(write_report(report, tmp_path / "r.json"))
        assert back.to_dict() == report.to_dict()

    def test_confusion_csv(self, report, tmp_path):
        frame = pd.read_csv(write_confusion_csv(report, tmp_path / "c.csv"))
        assert list(frame.columns) == ["true", "a", "b", "c"]
        assert frame[["a", "b", "c"]].to_numpy().sum() == 60

    def test_missing_report(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_report(tmp_path / "none.json")

    def test_malformed_report(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"kind": "lda"}))
        with pytest.raises(EvaluationError):
            read_report(path)

