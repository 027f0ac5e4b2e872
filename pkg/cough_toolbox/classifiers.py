"""Logistic regression, LDA, SVM and MLP classifiers trained from scratch."""

import itertools
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist
from scipy.special import log_softmax, softmax
from sklearn.preprocessing import StandardScaler

from .utils.binary_io import read_container, write_container
from .utils.hashing import training_fingerprint

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Params = Dict[str, np.ndarray]

MODEL_MAGIC = b"CLSM"
MODEL_VERSION = 1
SMO_TAU = 1e-12
SMO_BUDGET_PER_SAMPLE = 10_000
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
KINDS = ("logreg", "lda", "svm", "mlp")


class ClassifierError(Exception):
    """Raised for invalid training sets, models or inputs."""
    pass


class ConvergenceError(ClassifierError):
    """Raised when an optimizer exhausts its budget; no partial model is returned."""
    pass


class DimensionMismatchError(ClassifierError):
    """Raised when inputs do not match the trained dimension."""
    pass


@dataclass(eq=False)
class LabeledSet:
    """Rows of X (n x d, or n x S x D feature maps) with labels in 0..K-1."""

    X: np.ndarray
    y: np.ndarray
    n_classes: Optional[int] = None
    class_names: Optional[List[str]] = None

    def __post_init__(self) -> None:
        X = np.asarray(self.X)
        if not np.issubdtype(X.dtype, np.floating):
            X = X.astype(np.float64)
        self.X = X
        self.y = np.asarray(self.y).astype(np.int64).reshape(-1)
        if X.ndim not in (2, 3) or X.shape[0] != self.y.shape[0]:
            raise ClassifierError(f"X has shape {X.shape} but there are {self.y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise ClassifierError("Features contain non-finite values")
        if self.y.size and self.y.min() < 0:
            raise ClassifierError("Labels must be non-negative")
        if self.n_classes is None:
            self.n_classes = len(self.class_names) if self.class_names else int(self.y.max(initial=-1)) + 1
        if self.y.size and self.y.max() >= self.n_classes:
            raise ClassifierError(f"Label {self.y.max()} out of range for K={self.n_classes}")
        missing = np.setdiff1d(np.arange(self.n_classes), self.y)
        if self.y.size and missing.size:
            raise ClassifierError(f"Classes without rows: {missing.tolist()}")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def dim(self) -> int:
        return int(np.prod(self.X.shape[1:]))

    def subset(self, indices: Sequence[int]) -> "LabeledSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.X[idx], self.y[idx], self.n_classes, self.class_names)

    def fingerprint(self) -> str:
        return training_fingerprint(self.X, self.y)


class Standardizer:
    """Per-dimension z-scoring with population statistics from training data.

    Wraps :class:`sklearn.preprocessing.StandardScaler`; ``mean`` and ``scale``
    expose the fitted statistics so a model container can store them.
    """

    def __init__(self, mean: Optional[np.ndarray] = None, scale: Optional[np.ndarray] = None):
        self._scaler = StandardScaler()
        if mean is not None and scale is not None:
            mean = np.asarray(mean, dtype=np.float64)
            scale = np.asarray(scale, dtype=np.float64)
            self._scaler.mean_ = mean
            self._scaler.scale_ = scale
            self._scaler.var_ = scale ** 2
            self._scaler.n_features_in_ = mean.shape[0]
            self._scaler.n_samples_seen_ = 0

    @property
    def fitted(self) -> bool:
        return hasattr(self._scaler, "mean_")

    @property
    def mean(self) -> Optional[np.ndarray]:
        return self._scaler.mean_ if self.fitted else None

    @property
    def scale(self) -> Optional[np.ndarray]:
        return self._scaler.scale_ if self.fitted else None

    def fit(self, X: np.ndarray) -> "Standardizer":
        self._scaler = StandardScaler().fit(np.asarray(X, dtype=np.float64))
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ClassifierError("Standardizer is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return X.copy()
        return self._scaler.transform(X)


@dataclass(frozen=True)
class LogRegParams:
    reg_c: float = 1.0
    l1: float = 0.0
    l2: float = 0.0
    max_iter: int = 2000
    tol: float = 1e-6
    standardize: bool = True


@dataclass(frozen=True)
class LdaParams:
    shrinkage: float = 1e-4
    standardize: bool = True


@dataclass(frozen=True)
class SvmParams:
    reg_c: float = 1.0
    gamma: float = 1.0
    kernel: str = "rbf"
    tol: float = 1e-3
    standardize: bool = True


@dataclass(frozen=True)
class MlpParams:
    hidden: int = 70
    l2: float = 0.0
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 64
    standardize: bool = True


HyperParams = Union[LogRegParams, LdaParams, SvmParams, MlpParams]
PARAM_TYPES: Dict[str, type] = {
    "logreg": LogRegParams, "lda": LdaParams, "svm": SvmParams, "mlp": MlpParams,
}


@dataclass(eq=False)
class ClassifierModel:
    """Trained parameters of one classifier kind plus its standardization."""

    kind: str
    params: Params
    hyperparams: Dict[str, Any]
    standardizer: Optional[Standardizer]
    n_classes: int
    dim: int
    fingerprint: str = ""
    history: List[float] = field(default_factory=list)


class Prediction(NamedTuple):
    labels: np.ndarray
    probabilities: Optional[np.ndarray]


def params_from_dict(kind: str, values: Dict[str, Any]) -> HyperParams:
    if kind not in PARAM_TYPES:
        raise ClassifierError(f"Unknown classifier kind {kind!r}; expected one of {KINDS}")
    try:
        return PARAM_TYPES[kind](**values)  # type: ignore[no-any-return]
    except TypeError as e:
        raise ClassifierError(f"Invalid {kind} hyperparameters {values}: {e}") from e


def expand_grid(kind: str, **axes: Sequence[Any]) -> List[HyperParams]:
    """Cartesian product of per-field value lists, in row-major order."""
    names = sorted(axes)
    return [params_from_dict(kind, dict(zip(names, combo)))
            for combo in itertools.product(*(axes[n] for n in names))]


def _require_trainable(data: LabeledSet) -> None:
    if data.X.ndim != 2:
        raise ClassifierError(f"Classifiers need an n x d matrix, got shape {data.X.shape}")
    if data.n_classes is None or data.n_classes < 2 or np.unique(data.y).size < 2:
        raise ClassifierError("Training needs at least 2 classes")


def _prepare(data: LabeledSet, standardize: bool) -> Tuple[np.ndarray, Optional[Standardizer]]:
    _require_trainable(data)
    if not standardize:
        return data.X.astype(np.float64), None
    scaler = Standardizer().fit(data.X)
    return scaler.transform(data.X), scaler


def _one_hot(y: np.ndarray, K: int) -> np.ndarray:
    Y = np.zeros((y.shape[0], K))
    Y[np.arange(y.shape[0]), y] = 1.0
    return Y


def logreg_objective_and_gradient(params: Params, X: np.ndarray, y: np.ndarray,
                                  reg_c: float, l1: float, l2: float) -> Tuple[float, Params]:
    """Summed cross-entropy + (1/C)(l1 |W|_1 + l2 |W|^2 / 2); l1 enters through sign(W)."""
    W, b = params["W"], params["b"]
    logits = X @ W + b
    log_p = log_softmax(logits, axis=1)
    Y = _one_hot(y, W.shape[1])
    obj = -float(np.sum(Y * log_p)) + (l1 * np.abs(W).sum() + 0.5 * l2 * np.sum(W * W)) / reg_c
    delta = np.exp(log_p) - Y
    grad_W = X.T @ delta + (l1 * np.sign(W) + l2 * W) / reg_c
    return obj, {"W": grad_W, "b": delta.sum(axis=0)}


def _logreg_smooth(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray,
                   l2_coef: float) -> Tuple[float, np.ndarray, np.ndarray]:
    log_p = log_softmax(X @ W + b, axis=1)
    delta = np.exp(log_p) - Y
    obj = -float(np.sum(Y * log_p)) + 0.5 * l2_coef * float(np.sum(W * W))
    return obj, X.T @ delta + l2_coef * W, delta.sum(axis=0)


def train_logreg(data: LabeledSet, hp: LogRegParams = LogRegParams(), seed: int = 0) -> ClassifierModel:
    """Multinomial logistic regression by proximal gradient with backtracking.

    The l1 term is handled by soft-thresholding; iteration stops at
    ``max_iter`` or when the gradient-mapping norm drops below ``tol``.
    """
    if hp.reg_c <= 0:
        raise ClassifierError("reg_c must be > 0")
    X, scaler = _prepare(data, hp.standardize)
    K = int(data.n_classes or 0)
    Y = _one_hot(data.y, K)
    l1_coef, l2_coef = hp.l1 / hp.reg_c, hp.l2 / hp.reg_c

    W = np.zeros((X.shape[1], K))
    b = np.zeros(K)
    step = 1.0
    f, gW, gb = _logreg_smooth(W, b, X, Y, l2_coef)
    history = [f + l1_coef * float(np.abs(W).sum())]
    for iteration in range(hp.max_iter):
        step *= 2.0
        for _ in range(80):
            W_new = W - step * gW
            W_new = np.sign(W_new) * np.maximum(np.abs(W_new) - step * l1_coef, 0.0)
            b_new = b - step * gb
            dW, db = W_new - W, b_new - b
            f_new, gW_new, gb_new = _logreg_smooth(W_new, b_new, X, Y, l2_coef)
            bound = f + float(np.sum(gW * dW) + np.sum(gb * db)) + (np.sum(dW * dW) + np.sum(db * db)) / (2 * step)
            if f_new <= bound + 1e-12 * abs(f):
                break
            step *= 0.5
        mapping_norm = float(np.sqrt(np.sum(dW * dW) + np.sum(db * db))) / step
        W, b, f, gW, gb = W_new, b_new, f_new, gW_new, gb_new
        history.append(f + l1_coef * float(np.abs(W).sum()))
        if mapping_norm < hp.tol:
            logger.debug("Logistic regression converged after %d iterations", iteration + 1)
            break

    return ClassifierModel("logreg", {"W": W, "b": b}, asdict(hp), scaler, K, X.shape[1],
                           data.fingerprint(), history)


def train_lda(data: LabeledSet, hp: LdaParams = LdaParams(), seed: int = 0) -> ClassifierModel:
    """Gaussian discriminant with a shared, shrunk covariance.

    The pooled within-class covariance divides by n, so duplicating every
    row leaves the model unchanged.
    """
    X, scaler = _prepare(data, hp.standardize)
    n, d = X.shape
    K = int(data.n_classes or 0)
    if n <= K:
        raise ClassifierError(f"LDA needs more rows than classes (n={n}, K={K})")
    counts = np.bincount(data.y, minlength=K).astype(np.float64)
    means = np.vstack([X[data.y == k].mean(axis=0) for k in range(K)])
    centered = X - means[data.y]
    cov = centered.T @ centered / n
    cov += hp.shrinkage * np.trace(cov) / d * np.eye(d)
    try:
        factor = cho_factor(cov)
    except LinAlgError as e:
        raise ClassifierError("Pooled covariance is singular; features may be constant") from e
    coef = cho_solve(factor, means.T).T
    intercept = -0.5 * np.sum(coef * means, axis=1) + np.log(counts / n)
    params = {"means": means, "covariance": cov, "coef": coef, "intercept": intercept,
              "priors": counts / n}
    return ClassifierModel("lda", params, asdict(hp), scaler, K, d, data.fingerprint())


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "rbf":
        return np.exp(-gamma * cdist(A, B, "sqeuclidean"))
    if kernel == "linear":
        return A @ B.T
    raise ClassifierError(f"Unknown kernel {kernel!r}")


class SmoResult(NamedTuple):
    beta: np.ndarray
    bias: float
    iterations: int
    gap: float


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
              max_iter: Optional[int] = None) -> SmoResult:
    """Binary soft-margin dual by SMO with maximal-violating-pair selection.

    Works on beta = y * alpha with bounds min(0, yC) <= beta <= max(0, yC)
    and sum(beta) = 0. The decision function is ``K @ beta + bias``.

    Raises:
        ConvergenceError: when ``max_iter`` pair updates do not close the gap.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if max_iter is None:
        max_iter = SMO_BUDGET_PER_SAMPLE * n
    lower = np.minimum(0.0, y * C)
    upper = np.maximum(0.0, y * C)
    beta = np.zeros(n)
    grad = y.copy()
    diag = np.diag(K)

    for iteration in range(max_iter + 1):
        up = beta < upper
        low = beta > lower
        i = int(np.argmax(np.where(up, grad, -np.inf)))
        j = int(np.argmin(np.where(low, grad, np.inf)))
        gap = float(grad[i] - grad[j])
        if gap <= tol:
            break
        if iteration == max_iter:
            raise ConvergenceError(f"SMO did not converge in {max_iter} updates (gap {gap:.3g})")
        curvature = max(diag[i] + diag[j] - 2.0 * K[i, j], SMO_TAU)
        lam = min(upper[i] - beta[i], beta[j] - lower[j], gap / curvature)
        beta[i] += lam
        beta[j] -= lam
        grad -= lam * (K[i] - K[j])

    free = (beta > lower + 1e-12) & (beta < upper - 1e-12)
    if np.any(free):
        bias = float(np.mean(grad[free]))
    else:
        bias = 0.5 * float(grad[i] + grad[j])
    if iteration > 0.9 * max_iter:
        logger.warning("SMO used %d of %d updates", iteration, max_iter)
    return SmoResult(beta, bias, iteration, gap)


def train_svm(data: LabeledSet, hp: SvmParams = SvmParams(), seed: int = 0) -> ClassifierModel:
    """One-vs-rest kernel SVMs, one SMO problem per class."""
    if hp.reg_c <= 0 or hp.gamma <= 0:
        raise ClassifierError("reg_c and gamma must be > 0")
    X, scaler = _prepare(data, hp.standardize)
    K = int(data.n_classes or 0)
    gram = kernel_matrix(X, X, hp.kernel, hp.gamma)
    betas = np.zeros((K, X.shape[0]))
    biases = np.zeros(K)
    for k in range(K):
        target = np.where(data.y == k, 1.0, -1.0)
        result = smo_solve(gram, target, hp.reg_c, hp.tol)
        betas[k], biases[k] = result.beta, result.bias
        logger.debug("SVM class %d: %d updates, gap %.3g", k, result.iterations, result.gap)
    support = np.any(betas != 0.0, axis=0)
    params = {"support_vectors": X[support], "beta": betas[:, support], "bias": biases}
    return ClassifierModel("svm", params, asdict(hp), scaler, K, X.shape[1], data.fingerprint())


def _mlp_forward(params: Params, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pre = X @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    return pre, hidden @ params["W2"] + params["b2"]


def mlp_objective_and_gradient(params: Params, X: np.ndarray, y: np.ndarray,
                               l2: float) -> Tuple[float, Params]:
    """Mean cross-entropy + l2 / (2 m) (|W1|^2 + |W2|^2) over a batch of m rows."""
    m = X.shape[0]
    pre, logits = _mlp_forward(params, X)
    hidden = np.maximum(pre, 0.0)
    log_p = log_softmax(logits, axis=1)
    Y = _one_hot(y, params["W2"].shape[1])
    penalty = 0.5 * l2 / m * (np.sum(params["W1"] ** 2) + np.sum(params["W2"] ** 2))
    obj = -float(np.sum(Y * log_p)) / m + float(penalty)

    d_logits = (np.exp(log_p) - Y) / m
    d_pre = (d_logits @ params["W2"].T) * (pre > 0)
    grads = {
        "W1": X.T @ d_pre + l2 / m * params["W1"],
        "b1": d_pre.sum(axis=0),
        "W2": hidden.T @ d_logits + l2 / m * params["W2"],
        "b2": d_logits.sum(axis=0),
    }
    return obj, grads


def mlp_activation_pattern(params: Params, X: np.ndarray) -> np.ndarray:
    return _mlp_forward(params, X)[0] > 0


def init_mlp(d: int, hidden: int, K: int, rng: np.random.Generator) -> Params:
    """He-normal weights, zero biases."""
    return {
        "W1": rng.standard_normal((d, hidden)) * np.sqrt(2.0 / d),
        "b1": np.zeros(hidden),
        "W2": rng.standard_normal((hidden, K)) * np.sqrt(2.0 / hidden),
        "b2": np.zeros(K),
    }


class Adam:
    """Adaptive-moment updates over a dict of parameter arrays."""

    def __init__(self, params: Params, learning_rate: float = 1e-3,
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name in sorted(params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            params[name] -= self.learning_rate * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def train_mlp(data: LabeledSet, hp: MlpParams = MlpParams(), seed: int = 0) -> ClassifierModel:
    """One ReLU hidden layer with a softmax output, trained by mini-batch Adam.

    Batch order comes from one seeded generator, so the result depends only
    on (data, hp, seed).
    """
    if hp.hidden < 1 or hp.epochs < 1 or hp.batch_size < 1:
        raise ClassifierError("hidden, epochs and batch_size must be >= 1")
    X, scaler = _prepare(data, hp.standardize)
    K = int(data.n_classes or 0)
    rng = np.random.default_rng(seed)
    params = init_mlp(X.shape[1], hp.hidden, K, rng)
    optimizer = Adam(params, hp.learning_rate)
    n = X.shape[0]
    history = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            batch = order[start:start + hp.batch_size]
            loss, grads = mlp_objective_and_gradient(params, X[batch], data.y[batch], hp.l2)
            optimizer.step(params, grads)
            total += loss * batch.shape[0]
        history.append(total / n)
    logger.debug("MLP final epoch loss %.6f", history[-1])
    return ClassifierModel("mlp", params, asdict(hp), scaler, K, X.shape[1], data.fingerprint(), history)


TRAINERS: Dict[str, Callable[..., ClassifierModel]] = {
    "logreg": train_logreg, "lda": train_lda, "svm": train_svm, "mlp": train_mlp,
}


def train(kind: str, data: LabeledSet, hp: Optional[HyperParams] = None, seed: int = 0) -> ClassifierModel:
    """Dispatch to the trainer for ``kind``."""
    if kind not in TRAINERS:
        raise ClassifierError(f"Unknown classifier kind {kind!r}; expected one of {KINDS}")
    hp = hp if hp is not None else PARAM_TYPES[kind]()
    if not isinstance(hp, PARAM_TYPES[kind]):
        raise ClassifierError(f"{type(hp).__name__} given for a {kind} model")
    return TRAINERS[kind](data, hp, seed)


def _model_input(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, model.dim)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionMismatchError(f"Model expects {model.dim} features, got shape {X.shape}")
    return model.standardizer.transform(X) if model.standardizer is not None else X


def decision_function(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    """Per-class scores (m x K): logits, discriminants or OvR margins."""
    Z = _model_input(model, X)
    p = model.params
    if model.kind == "logreg":
        return Z @ p["W"] + p["b"]
    if model.kind == "lda":
        return Z @ p["coef"].T + p["intercept"]
    if model.kind == "svm":
        hp = model.hyperparams
        if Z.shape[0] == 0:
            return np.zeros((0, model.n_classes))
        return kernel_matrix(Z, p["support_vectors"], hp["kernel"], hp["gamma"]) @ p["beta"].T + p["bias"]
    if model.kind == "mlp":
        return _mlp_forward(p, Z)[1]
    raise ClassifierError(f"Unknown classifier kind {model.kind!r}")


def predict(model: ClassifierModel, X: np.ndarray) -> Prediction:
    """Labels for each row, plus class probabilities for LR and MLP."""
    scores = decision_function(model, X)
    labels = np.argmax(scores, axis=1).astype(np.int64) if scores.shape[0] else np.zeros(0, dtype=np.int64)
    probabilities = softmax(scores, axis=1) if model.kind in ("logreg", "mlp") else None
    return Prediction(labels, probabilities)


def check_gradient(fun: Callable[[Params], Tuple[float, Params]], params: Params, eps: float = 1e-5,
                   pattern: Optional[Callable[[Params], np.ndarray]] = None) -> float:
    """Max |analytic - numeric| / max(|analytic|, |numeric|) over all coordinates.

    Central differences with step ``eps``. When ``pattern`` is given,
    coordinates whose perturbation changes it (a ReLU or pooling switch)
    are skipped.
    """
    _, analytic = fun(params)
    base_pattern = pattern(params) if pattern is not None else None
    a_vals: List[float] = []
    n_vals: List[float] = []
    for name in sorted(params):
        array = params[name]
        for idx in np.ndindex(*array.shape):
            original = array[idx]
            array[idx] = original + eps
            plus, pattern_plus = fun(params)[0], pattern(params) if pattern is not None else None
            array[idx] = original - eps
            minus, pattern_minus = fun(params)[0], pattern(params) if pattern is not None else None
            array[idx] = original
            if base_pattern is not None and not (
                np.array_equal(pattern_plus, base_pattern) and np.array_equal(pattern_minus, base_pattern)
            ):
                continue
            a_vals.append(float(analytic[name][idx]))
            n_vals.append((plus - minus) / (2.0 * eps))
    if not a_vals:
        return 0.0
    a, num = np.asarray(a_vals), np.asarray(n_vals)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(num))), 1e-12)
    return float(np.max(np.abs(a - num)) / scale)


def save_model(path: PathLike, model: ClassifierModel) -> Path:
    """Versioned container holding parameters, standardization and metadata."""
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    if model.standardizer is not None:
        arrays["std.mean"] = np.asarray(model.standardizer.mean)
        arrays["std.scale"] = np.asarray(model.standardizer.scale)
    meta = {
        "kind": model.kind, "hyperparams": model.hyperparams, "n_classes": model.n_classes,
        "dim": model.dim, "fingerprint": model.fingerprint, "history": model.history,
    }
    return write_container(path, MODEL_MAGIC, MODEL_VERSION, meta, arrays)


def load_model(path: PathLike) -> ClassifierModel:
    version, meta, arrays = read_container(path, MODEL_MAGIC)
    if version != MODEL_VERSION:
        raise ClassifierError(f"{path}: unsupported model version {version}")
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    scaler = None
    if "std.mean" in arrays:
        scaler = Standardizer(arrays["std.mean"], arrays["std.scale"])
    return ClassifierModel(meta["kind"], params, meta["hyperparams"], scaler, int(meta["n_classes"]),
                           int(meta["dim"]), meta.get("fingerprint", ""), list(meta.get("history", [])))


def export_weights_csv(path: PathLike, model: ClassifierModel) -> Path:
    """Long-format CSV (parameter, row, col, value) of every trained array."""
    records = []
    for name in sorted(model.params):
        array = np.atleast_2d(model.params[name])
        if model.params[name].ndim == 1:
            array = array.T
        for (r, c), value in np.ndenumerate(array):
            records.append({"parameter": name, "row": r, "col": c, "value": float(value)})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(records, columns=["parameter", "row", "col", "value"]).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n"
    )
    return path
