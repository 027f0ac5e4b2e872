"""Stratified k-fold plans, nested grid search and classification metrics."""

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, cohen_kappa_score
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.model_selection import StratifiedKFold

from .classifiers import KINDS, LabeledSet, predict, train
from .data_processing import DataProcessor
from .spotting_net import CnnConfig, predict_cnn_batch, train_cnn
from .utils.hashing import hash_array

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FrontEnd = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, str]]

OUTER_FOLDS = 5
INNER_FOLDS = 4
SIGMA_CONVENTION = "population"


class EvaluationError(Exception):
    """Raised for invalid fold plans, metric inputs or reports."""
    pass


class FoldError(EvaluationError):
    """Training or scoring failed inside one outer fold."""

    def __init__(self, fold: int, message: str):
        super().__init__(f"outer fold {fold}: {message}")
        self.fold = fold


def _derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Per-sample fold assignment."""

    k: int
    assignment: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def folds(self) -> List[np.ndarray]:
        return [self.test_indices(f) for f in range(self.k)]


def kfold_split(labels: Sequence[int], k: int = OUTER_FOLDS, seed: int = 0) -> FoldPlan:
    """Stratified assignment from a shuffled :class:`StratifiedKFold`.

    Per-class and total fold sizes stay within one of each other.

    Raises:
        EvaluationError: if k < 2 or some class has fewer than k samples.
    """
    y = np.asarray(labels).reshape(-1)
    if k < 2:
        raise EvaluationError(f"k must be >= 2, got {k}")
    classes, counts = np.unique(y, return_counts=True)
    small = [(c.item(), int(n)) for c, n in zip(classes, counts) if n < k]
    if small:
        raise EvaluationError(f"Classes with fewer than {k} samples (class, count): {small}")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    assignment = np.full(y.shape[0], -1, dtype=np.int64)
    for fold, (_, test) in enumerate(splitter.split(np.zeros((y.shape[0], 1)), y)):
        assignment[test] = fold
    return FoldPlan(k, assignment, seed)


class NestedSplit(NamedTuple):
    fold: int
    train: np.ndarray
    test: np.ndarray
    inner: FoldPlan


def iter_nested_splits(labels: Sequence[int], outer_k: int = OUTER_FOLDS, inner_k: int = INNER_FOLDS,
                       seed: int = 0) -> Iterator[NestedSplit]:
    """Outer folds with an inner plan over each outer-training portion.

    Inner plan indices are positions within ``train``.
    """
    y = np.asarray(labels).reshape(-1)
    outer = kfold_split(y, outer_k, seed)
    for fold in range(outer_k):
        train_idx, test_idx = outer.train_indices(fold), outer.test_indices(fold)
        inner = kfold_split(y[train_idx], inner_k, _derive_seed(seed, fold))
        yield NestedSplit(fold, train_idx, test_idx, inner)


def _check_pair(pred: Sequence[int], truth: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(truth).reshape(-1)
    if p.shape != t.shape:
        raise EvaluationError(f"Length mismatch: {p.shape[0]} predictions, {t.shape[0]} labels")
    if p.size == 0:
        raise EvaluationError("Metrics need at least one sample")
    return p, t


def accuracy(pred: Sequence[int], truth: Sequence[int]) -> float:
    p, t = _check_pair(pred, truth)
    return float(accuracy_score(t, p))


def cohen_kappa(pred: Sequence[int], truth: Sequence[int]) -> float:
    """(p_o - p_e) / (1 - p_e); 1.0 when both raters agree on every sample."""
    p, t = _check_pair(pred, truth)
    if np.array_equal(p, t):
        return 1.0
    return float(cohen_kappa_score(t, p))


def confusion_matrix(pred: Sequence[int], truth: Sequence[int], n_classes: int) -> np.ndarray:
    """Entry (i, j) counts samples of true class i predicted as j."""
    p, t = _check_pair(pred, truth)
    if min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= n_classes:
        raise EvaluationError(f"Labels must lie in 0..{n_classes - 1}")
    return sk_confusion_matrix(t, p, labels=np.arange(n_classes)).astype(np.int64)


def sigma_acc(fold_accuracies: Sequence[float]) -> float:
    """Population standard deviation of outer-fold accuracies."""
    values = np.asarray(fold_accuracies, dtype=np.float64)
    if values.size < 2:
        raise EvaluationError("sigma_acc needs at least 2 fold accuracies")
    return float(np.std(values, ddof=0))


@dataclass(frozen=True)
class ModelKind:
    """How to fit and apply one model family inside the CV loop."""

    fit: Callable[[LabeledSet, Any, int], Any]
    predict: Callable[[Any, np.ndarray], np.ndarray]


def _fit_classifier(kind: str, data: LabeledSet, hp: Any, seed: int) -> Any:
    return train(kind, data, hp, seed)


def _predict_classifier(model: Any, X: np.ndarray) -> np.ndarray:
    return predict(model, X).labels


def _fit_cnn(data: LabeledSet, hp: CnnConfig, seed: int) -> Any:
    return train_cnn(data.X, data.y, replace(hp, seed=seed), n_classes=data.n_classes)


def _predict_cnn(model: Any, X: np.ndarray) -> np.ndarray:
    return np.argmax(predict_cnn_batch(model, X), axis=1)


MODEL_KINDS: Dict[str, ModelKind] = {
    kind: ModelKind(partial(_fit_classifier, kind), _predict_classifier) for kind in KINDS
}
MODEL_KINDS["cnn"] = ModelKind(_fit_cnn, _predict_cnn)


def hyperparams_dict(hp: Any) -> Dict[str, Any]:
    if is_dataclass(hp) and not isinstance(hp, type):
        return asdict(hp)
    return dict(hp)


@dataclass
class EvalReport:
    """Outer-fold scores, their aggregates and the selections that produced them."""

    kind: str
    n_classes: int
    fold_accuracies: List[float]
    mean_accuracy: float
    sigma_acc: float
    fold_kappas: List[float]
    mean_kappa: float
    pooled_accuracy: float
    confusion: List[List[int]]
    selected: List[Dict[str, Any]]
    inner_scores: List[List[float]] = field(default_factory=list)
    fingerprints: List[Dict[str, str]] = field(default_factory=list)
    class_names: Optional[List[str]] = None
    seed: int = 0
    sigma_convention: str = SIGMA_CONVENTION
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        try:
            return cls(**data)
        except TypeError as e:
            raise EvaluationError(f"Malformed report: {e}") from e


class _PreparedFold(NamedTuple):
    split: NestedSplit
    train_set: LabeledSet
    X_test: np.ndarray
    front_fp: str


class _FoldResult(NamedTuple):
    fold: int
    accuracy: float
    kappa: float
    confusion: np.ndarray
    selected: Dict[str, Any]
    inner_scores: List[float]
    fingerprint: Dict[str, str]


def _map(executor: Optional[ThreadPoolExecutor], fn: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
    """Results in input order, on the pool when there is one."""
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def _prepare_fold(split: NestedSplit, data: LabeledSet, front_end: Optional[FrontEnd]) -> _PreparedFold:
    try:
        if front_end is not None:
            X_train, X_test, front_fp = front_end(split.train, split.test)
        else:
            X_train, X_test, front_fp = data.X[split.train], data.X[split.test], ""
    except Exception as e:
        raise FoldError(split.fold, f"{type(e).__name__}: {e}") from e
    train_set = LabeledSet(X_train, data.y[split.train], data.n_classes, data.class_names)
    return _PreparedFold(split, train_set, X_test, front_fp)


def _inner_score(job: Tuple[int, int, int], prepared: Sequence[_PreparedFold], kind: ModelKind,
                 grid: Sequence[Any], seed: int) -> float:
    """Inner-fold accuracy of one grid point inside one outer fold."""
    fold, point, inner_fold = job
    p = prepared[fold]
    plan = p.split.inner
    tr, te = plan.train_indices(inner_fold), plan.test_indices(inner_fold)
    try:
        model = kind.fit(p.train_set.subset(tr), grid[point], seed)
        return accuracy(kind.predict(model, p.train_set.X[te]), p.train_set.y[te])
    except Exception as e:
        raise FoldError(p.split.fold, f"{type(e).__name__}: {e}") from e


def _select(scores: Sequence[float]) -> int:
    """Index of the best score; ties go to the earlier point."""
    best = 0
    for i, score in enumerate(scores):
        if score > scores[best]:
            best = i
    return best


def _finish_fold(item: Tuple[_PreparedFold, List[float]], data: LabeledSet, kind: ModelKind,
                 grid: Sequence[Any], seed: int) -> _FoldResult:
    prepared, inner_scores = item
    split = prepared.split
    best = _select(inner_scores) if inner_scores else 0
    try:
        model = kind.fit(prepared.train_set, grid[best], seed)
        pred = kind.predict(model, prepared.X_test)
    except Exception as e:
        raise FoldError(split.fold, f"{type(e).__name__}: {e}") from e

    truth = data.y[split.test]
    fingerprint = {"training": prepared.train_set.fingerprint(), "test_indices": hash_array(split.test)}
    if prepared.front_fp:
        fingerprint["front_end"] = prepared.front_fp
    logger.info("Outer fold %d: selected grid point %d, accuracy %.4f", split.fold, best, accuracy(pred, truth))
    return _FoldResult(split.fold, accuracy(pred, truth), cohen_kappa(pred, truth),
                       confusion_matrix(pred, truth, int(data.n_classes or 0)),
                       hyperparams_dict(grid[best]), list(inner_scores), fingerprint)


def grid_search_cv(data: LabeledSet, kind: str, grid: Sequence[Any], seed: int = 0,
                   outer_k: int = OUTER_FOLDS, inner_k: int = INNER_FOLDS,
                   front_end: Optional[FrontEnd] = None, workers: int = 1) -> EvalReport:
    """Nested cross-validation over a hyperparameter grid.

    Each outer fold selects the grid point with the best mean inner-fold
    accuracy (ties go to the earlier point), retrains it on the whole
    outer-training portion and scores the outer-test fold.

    ``front_end``, when given, maps (train indices, test indices) to feature
    matrices fitted on the training indices only; ``data.X`` is then only
    passed through to it by index. It is fitted once per outer fold and its
    training features are reused by the inner folds, so inner scores see a
    front end that was fitted on their own held-out rows and are optimistic.
    Refitting it per inner fold would multiply front-end training by
    ``inner_k + 1``; outer-test rows never reach it either way.

    Front ends, (outer fold, grid point, inner fold) fits and final refits
    run as three phases on one pool of ``workers`` threads. Results are
    merged by key, so the worker count never changes the report.

    Raises:
        EvaluationError: on an empty grid or unknown kind.
        FoldError: when a fold fails; carries the fold index.
    """
    if not grid:
        raise EvaluationError("Hyperparameter grid is empty")
    if kind not in MODEL_KINDS:
        raise EvaluationError(f"Unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    model_kind = MODEL_KINDS[kind]
    grid = list(grid)
    splits = list(iter_nested_splits(data.y, outer_k, inner_k, seed))

    with ThreadPoolExecutor(max_workers=workers) if workers > 1 else nullcontext() as executor:
        prepared = _map(executor, partial(_prepare_fold, data=data, front_end=front_end), splits)
        inner_scores: List[List[float]] = [[] for _ in prepared]
        if len(grid) > 1:
            jobs = [(f, g, i) for f in range(len(prepared)) for g in range(len(grid)) for i in range(inner_k)]
            scores = _map(executor, partial(_inner_score, prepared=prepared, kind=model_kind, grid=grid,
                                            seed=seed), jobs)
            by_key = dict(zip(jobs, scores))
            inner_scores = [[float(np.mean([by_key[(f, g, i)] for i in range(inner_k)])) for g in range(len(grid))]
                            for f in range(len(prepared))]
        results = _map(executor, partial(_finish_fold, data=data, kind=model_kind, grid=grid, seed=seed),
                       list(zip(prepared, inner_scores)))
    results.sort(key=lambda r: r.fold)

    accuracies = [r.accuracy for r in results]
    kappas = [r.kappa for r in results]
    confusion = np.sum([r.confusion for r in results], axis=0)
    return EvalReport(
        kind=kind,
        n_classes=int(data.n_classes or 0),
        fold_accuracies=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
        sigma_acc=sigma_acc(accuracies),
        fold_kappas=kappas,
        mean_kappa=float(np.mean(kappas)),
        pooled_accuracy=float(np.trace(confusion)) / float(confusion.sum()),
        confusion=confusion.tolist(),
        selected=[r.selected for r in results],
        inner_scores=[r.inner_scores for r in results],
        fingerprints=[r.fingerprint for r in results],
        class_names=list(data.class_names) if data.class_names else None,
        seed=seed,
    )


def write_report(report: EvalReport, json_path: PathLike,
                 confusion_csv_path: Optional[PathLike] = None) -> Path:
    """JSON with every report field; optionally the confusion matrix as CSV."""
    path = DataProcessor().save_json(report.to_dict(), json_path)
    if confusion_csv_path is not None:
        write_confusion_csv(report, confusion_csv_path)
    return path


def write_confusion_csv(report: EvalReport, path: PathLike) -> Path:
    names = report.class_names or [str(k) for k in range(report.n_classes)]
    frame = pd.DataFrame(report.confusion, columns=names)
    frame.insert(0, "true", names)
    return DataProcessor().save_csv(frame, path)


def read_report(json_path: PathLike) -> EvalReport:
    """Load a report written by ``write_report``."""
    path = Path(json_path)
    if not path.is_file():
        raise FileNotFoundError(f"Report not found: {path}")
    try:
        data = DataProcessor().load_json(path)
    except ValueError as e:
        raise EvaluationError(str(e)) from e
    return EvalReport.from_dict(data)
