"""Two-block convolutional network over feature maps for cough spotting.

conv(k x k, F) -> ReLU -> 2x2 max-pool -> dropout -> conv(k x k, F) -> ReLU
-> 2x2 max-pool -> flatten -> dense -> ReLU -> dense(K) -> softmax

Convolutions are "valid" and pooling floors odd sizes. Everything runs in
float64 on micro-batches with a fixed reduction order.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from .classifiers import Adam, check_gradient
from .data_processing import DataProcessor
from .features import FeatureMap
from .utils.binary_io import read_container, write_container
from .utils.hashing import training_fingerprint

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Params = Dict[str, np.ndarray]
MapsLike = Union[Sequence[FeatureMap], np.ndarray]

CNN_MAGIC = b"CNNM"
CNN_VERSION = 1
MICRO_BATCH = 8
NORM_FLOOR = 1e-12


class SpottingNetError(Exception):
    """Raised for invalid network configurations or inputs."""
    pass


class ShapeMismatchError(SpottingNetError):
    """Raised when a map does not have the trained S x D shape."""
    pass


@dataclass(frozen=True)
class CnnConfig:
    num_filters: int = 24
    kernel_size: int = 3
    dropout: float = 0.1
    dense_size: int = 32
    batch_size: int = 64
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("num_filters", "kernel_size", "dense_size", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise SpottingNetError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise SpottingNetError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0:
            raise SpottingNetError("learning_rate must be > 0")


class EpochRecord(NamedTuple):
    epoch: int
    loss: float
    train_accuracy: float


@dataclass(eq=False)
class CnnModel:
    params: Params
    config: CnnConfig
    input_shape: Tuple[int, int]
    n_classes: int
    norm_mean: np.ndarray
    norm_scale: np.ndarray
    history: List[EpochRecord] = field(default_factory=list)
    fingerprint: str = ""


def pooled_shape(S: int, D: int, kernel_size: int) -> Tuple[int, int]:
    """Spatial size after both conv/pool blocks.

    Raises:
        SpottingNetError: if any intermediate size falls below 1.
    """
    h, w = S, D
    for _ in range(2):
        h, w = (h - kernel_size + 1) // 2, (w - kernel_size + 1) // 2
        if h < 1 or w < 1:
            raise SpottingNetError(f"A {S} x {D} map is too small for two blocks with kernel {kernel_size}")
    return h, w


def flatten_size(S: int, D: int, kernel_size: int, num_filters: int) -> int:
    h, w = pooled_shape(S, D, kernel_size)
    return h * w * num_filters


def init_cnn(input_shape: Tuple[int, int], n_classes: int, config: CnnConfig,
             rng: np.random.Generator, zero_output: bool = True) -> Params:
    """He-normal convolution and hidden weights; the output layer starts at zero."""
    k, F = config.kernel_size, config.num_filters
    flat = flatten_size(input_shape[0], input_shape[1], k, F)

    def he(shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    params = {
        "conv1_W": he((1, k, k, F), k * k),
        "conv1_b": np.zeros(F),
        "conv2_W": he((F, k, k, F), F * k * k),
        "conv2_b": np.zeros(F),
        "dense_W": he((flat, config.dense_size), flat),
        "dense_b": np.zeros(config.dense_size),
        "out_W": np.zeros((config.dense_size, n_classes)),
        "out_b": np.zeros(n_classes),
    }
    if not zero_output:
        params["out_W"] = he((config.dense_size, n_classes), config.dense_size)
    return params


def _conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    k = W.shape[1]
    windows = sliding_window_view(x, (k, k), axis=(1, 2))
    B, H, Wd = windows.shape[:3]
    cols = windows.reshape(B * H * Wd, -1)
    out = cols @ W.reshape(-1, W.shape[-1]) + b
    return out.reshape(B, H, Wd, -1), cols


def _conv_backward(d_out: np.ndarray, cols: np.ndarray, x_shape: Tuple[int, ...],
                   W: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    B, H, Wd, F = d_out.shape
    C, k = W.shape[0], W.shape[1]
    flat = d_out.reshape(-1, F)
    dW = (cols.T @ flat).reshape(W.shape)
    db = flat.sum(axis=0)
    d_cols = (flat @ W.reshape(-1, F).T).reshape(B, H, Wd, C, k, k)
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + H, j:j + Wd, :] += d_cols[..., i, j]
    return dx, dW, db


def _pool_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    B, H, W, C = x.shape
    h, w = H // 2, W // 2
    blocks = x[:, :2 * h, :2 * w, :].reshape(B, h, 2, w, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, h, w, C, 4)
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def _pool_backward(d_out: np.ndarray, arg: np.ndarray, x_shape: Tuple[int, ...]) -> np.ndarray:
    B, h, w, C = d_out.shape
    blocks = np.zeros((B, h, w, C, 4))
    np.put_along_axis(blocks, arg[..., None], d_out[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :2 * h, :2 * w, :] = blocks.reshape(B, h, w, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * h, 2 * w, C)
    return dx


def _forward(params: Params, x: np.ndarray, dropout_mask: Optional[np.ndarray] = None
             ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    cache: Dict[str, np.ndarray] = {"x": x[..., None]}
    cache["z1"], cache["cols1"] = _conv_forward(cache["x"], params["conv1_W"], params["conv1_b"])
    a1 = np.maximum(cache["z1"], 0.0)
    p1, cache["arg1"] = _pool_forward(a1)
    if dropout_mask is not None:
        cache["mask"] = dropout_mask
        p1 = p1 * dropout_mask
    cache["p1"] = p1
    cache["z2"], cache["cols2"] = _conv_forward(p1, params["conv2_W"], params["conv2_b"])
    a2 = np.maximum(cache["z2"], 0.0)
    p2, cache["arg2"] = _pool_forward(a2)
    cache["flat"] = p2.reshape(p2.shape[0], -1)
    cache["z3"] = cache["flat"] @ params["dense_W"] + params["dense_b"]
    cache["a3"] = np.maximum(cache["z3"], 0.0)
    logits = cache["a3"] @ params["out_W"] + params["out_b"]
    return logits, cache


def _backward(params: Params, cache: Dict[str, np.ndarray], d_logits: np.ndarray) -> Params:
    grads = {"out_W": cache["a3"].T @ d_logits, "out_b": d_logits.sum(axis=0)}
    d_z3 = (d_logits @ params["out_W"].T) * (cache["z3"] > 0)
    grads["dense_W"] = cache["flat"].T @ d_z3
    grads["dense_b"] = d_z3.sum(axis=0)
    z2 = cache["z2"]
    d_p2 = (d_z3 @ params["dense_W"].T).reshape(z2.shape[0], z2.shape[1] // 2, z2.shape[2] // 2, -1)
    d_z2 = _pool_backward(d_p2, cache["arg2"], z2.shape) * (z2 > 0)
    d_p1, grads["conv2_W"], grads["conv2_b"] = _conv_backward(d_z2, cache["cols2"], cache["p1"].shape,
                                                              params["conv2_W"])
    if "mask" in cache:
        d_p1 = d_p1 * cache["mask"]
    z1 = cache["z1"]
    d_z1 = _pool_backward(d_p1, cache["arg1"], z1.shape) * (z1 > 0)
    _, grads["conv1_W"], grads["conv1_b"] = _conv_backward(d_z1, cache["cols1"], cache["x"].shape,
                                                           params["conv1_W"])
    return grads


def loss_and_gradients(params: Params, x: np.ndarray, y: np.ndarray, n_classes: int,
                       divisor: Optional[int] = None,
                       dropout_mask: Optional[np.ndarray] = None) -> Tuple[float, Params, int]:
    """Summed cross-entropy / ``divisor``, its gradients and the correct-prediction count."""
    divisor = divisor or x.shape[0]
    logits, cache = _forward(params, x, dropout_mask)
    log_p = log_softmax(logits, axis=1)
    Y = np.zeros_like(log_p)
    Y[np.arange(y.shape[0]), y] = 1.0
    loss = -float(np.sum(Y * log_p)) / divisor
    grads = _backward(params, cache, (np.exp(log_p) - Y) / divisor)
    correct = int(np.count_nonzero(np.argmax(logits, axis=1) == y))
    return loss, grads, correct


def activation_pattern(params: Params, x: np.ndarray) -> np.ndarray:
    """ReLU signs and pool winners; a change marks a non-differentiable step."""
    _, cache = _forward(params, x)
    return np.concatenate([
        (cache["z1"] > 0).ravel(), cache["arg1"].ravel(), (cache["z2"] > 0).ravel(),
        cache["arg2"].ravel(), (cache["z3"] > 0).ravel(),
    ]).astype(np.int64)


def _stack_maps(maps: MapsLike) -> np.ndarray:
    if isinstance(maps, np.ndarray):
        array = maps
    else:
        if not maps:
            raise SpottingNetError("No feature maps given")
        shapes = {m.shape for m in maps}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"Feature maps have inconsistent shapes: {sorted(shapes)}")
        array = np.stack([m.values for m in maps])
    if array.ndim != 3:
        raise ShapeMismatchError(f"Expected n x S x D maps, got shape {array.shape}")
    return array


def _normalize(model: CnnModel, batch: np.ndarray) -> np.ndarray:
    return (np.asarray(batch, dtype=np.float64) - model.norm_mean) / model.norm_scale


def _evaluate(params: Params, X: np.ndarray, y: np.ndarray,
              mean: np.ndarray, scale: np.ndarray) -> Tuple[float, float]:
    loss, correct = 0.0, 0
    for start in range(0, X.shape[0], MICRO_BATCH):
        xb = (X[start:start + MICRO_BATCH].astype(np.float64) - mean) / scale
        logits, _ = _forward(params, xb)
        log_p = log_softmax(logits, axis=1)
        yb = y[start:start + MICRO_BATCH]
        loss -= float(np.sum(log_p[np.arange(yb.shape[0]), yb]))
        correct += int(np.count_nonzero(np.argmax(logits, axis=1) == yb))
    return loss / X.shape[0], correct / X.shape[0]


def train_cnn(maps: MapsLike, labels: Sequence[int], config: CnnConfig = CnnConfig(),
              n_classes: Optional[int] = None) -> CnnModel:
    """Mini-batch Adam on mean cross-entropy with per-feature z-normalization.

    Shuffling and dropout masks come from one generator seeded by
    ``config.seed``; gradients of a batch are accumulated over micro-batches
    in a fixed order.

    Raises:
        ShapeMismatchError: if the maps do not share one S x D shape.
        SpottingNetError: on fewer than 2 classes or an empty class.
    """
    X = _stack_maps(maps)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise SpottingNetError(f"{X.shape[0]} maps but {y.shape[0]} labels")
    K = int(n_classes if n_classes is not None else y.max(initial=-1) + 1)
    if K < 2 or np.unique(y).size < 2:
        raise SpottingNetError("Spotting needs at least 2 classes")
    if y.min() < 0 or y.max() >= K or np.setdiff1d(np.arange(K), y).size:
        raise SpottingNetError(f"Every class in 0..{K - 1} needs at least one map")
    if not np.all(np.isfinite(X)):
        raise SpottingNetError("Feature maps contain non-finite values")

    S, D = int(X.shape[1]), int(X.shape[2])
    pooled_shape(S, D, config.kernel_size)
    mean = X.mean(axis=(0, 1), dtype=np.float64)
    std = X.std(axis=(0, 1), dtype=np.float64)
    scale = np.where(std > NORM_FLOOR, std, 1.0)

    rng = np.random.default_rng(config.seed)
    params = init_cnn((S, D), K, config, rng)
    optimizer = Adam(params, config.learning_rate)
    n = X.shape[0]
    history: List[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            total: Optional[Params] = None
            for sub in range(0, batch.shape[0], MICRO_BATCH):
                idx = batch[sub:sub + MICRO_BATCH]
                xb = (X[idx].astype(np.float64) - mean) / scale
                mask = None
                if config.dropout > 0:
                    h, w = (S - config.kernel_size + 1) // 2, (D - config.kernel_size + 1) // 2
                    keep = rng.random((idx.shape[0], h, w, config.num_filters)) >= config.dropout
                    mask = keep / (1.0 - config.dropout)
                _, grads, _ = loss_and_gradients(params, xb, y[idx], K, batch.shape[0], mask)
                if total is None:
                    total = grads
                else:
                    for name in total:
                        total[name] += grads[name]
            assert total is not None
            optimizer.step(params, total)
        loss, acc = _evaluate(params, X, y, mean, scale)
        history.append(EpochRecord(epoch, loss, acc))
        logger.debug("CNN epoch %d: loss %.6f, train accuracy %.4f", epoch, loss, acc)

    return CnnModel(params, config, (S, D), K, mean, scale, history, training_fingerprint(X, y))


def predict_cnn_batch(model: CnnModel, maps: MapsLike) -> np.ndarray:
    """n x K softmax probabilities with dropout inactive."""
    if isinstance(maps, np.ndarray) and maps.ndim == 3 and maps.shape[0] == 0:
        return np.zeros((0, model.n_classes))
    X = _stack_maps(maps)
    if tuple(X.shape[1:]) != model.input_shape:
        raise ShapeMismatchError(f"Model expects {model.input_shape} maps, got {tuple(X.shape[1:])}")
    out = np.zeros((X.shape[0], model.n_classes))
    for start in range(0, X.shape[0], MICRO_BATCH):
        logits, _ = _forward(model.params, _normalize(model, X[start:start + MICRO_BATCH]))
        out[start:start + MICRO_BATCH] = softmax(logits, axis=1)
    return out


def predict_cnn(model: CnnModel, fmap: Union[FeatureMap, np.ndarray]) -> np.ndarray:
    """K-class probability vector for one map."""
    values = fmap.values if isinstance(fmap, FeatureMap) else np.asarray(fmap)
    return predict_cnn_batch(model, values[None, ...])[0]


def gradient_check_cnn(config: Optional[CnnConfig] = None, seed: int = 0, eps: float = 1e-4,
                       map_shape: Tuple[int, int] = (8, 8), n_samples: int = 4,
                       n_classes: int = 3) -> float:
    """Max relative error of analytic vs central-difference gradients on a tiny net.

    Dropout is off and the output layer is randomly initialized so every
    parameter receives gradient.
    """
    config = config or CnnConfig(num_filters=4, kernel_size=2, dropout=0.0, dense_size=6)
    rng = np.random.default_rng(seed)
    params = init_cnn(map_shape, n_classes, config, rng, zero_output=False)
    x = rng.standard_normal((n_samples,) + tuple(map_shape))
    y = np.arange(n_samples) % n_classes

    def fun(p: Params) -> Tuple[float, Params]:
        loss, grads, _ = loss_and_gradients(p, x, y, n_classes)
        return loss, grads

    return check_gradient(fun, params, eps, pattern=lambda p: activation_pattern(p, x))


def save_cnn(path: PathLike, model: CnnModel) -> Path:
    arrays = dict(model.params)
    arrays["norm.mean"] = model.norm_mean
    arrays["norm.scale"] = model.norm_scale
    meta = {
        "config": asdict(model.config), "input_shape": list(model.input_shape),
        "n_classes": model.n_classes, "fingerprint": model.fingerprint,
        "history": [list(r) for r in model.history],
    }
    return write_container(path, CNN_MAGIC, CNN_VERSION, meta, arrays)


def load_cnn(path: PathLike) -> CnnModel:
    version, meta, arrays = read_container(path, CNN_MAGIC)
    if version != CNN_VERSION:
        raise SpottingNetError(f"{path}: unsupported model version {version}")
    mean, scale = arrays.pop("norm.mean"), arrays.pop("norm.scale")
    history = [EpochRecord(int(e), float(l), float(a)) for e, l, a in meta.get("history", [])]
    S, D = meta["input_shape"]
    return CnnModel(arrays, CnnConfig(**meta["config"]), (int(S), int(D)), int(meta["n_classes"]),
                    mean, scale, history, meta.get("fingerprint", ""))


def write_training_log(path: PathLike, model: CnnModel) -> Path:
    """CSV of epoch, loss, train_accuracy."""
    frame = pd.DataFrame([r._asdict() for r in model.history], columns=list(EpochRecord._fields))
    return DataProcessor(float_format="%.9g").save_csv(frame, path)


def with_seed(config: CnnConfig, seed: int) -> CnnConfig:
    return replace(config, seed=seed)
