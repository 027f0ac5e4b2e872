"""Diagonal-covariance GMM universal background model trained by EM."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .utils.binary_io import BinaryFormatError, read_fixed, write_fixed

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DGMM_MAGIC = b"DGMM"
WEIGHT_FLOOR = 1e-6
VARIANCE_FLOOR_RATIO = 1e-4
MIN_FRAMES_PER_COMPONENT = 10
KMEANS_ITERS = 10
CHUNK_ROWS = 8192
LOG_2PI = np.log(2.0 * np.pi)


class GmmError(Exception):
    """Raised for invalid GMM inputs or model files."""
    pass


@dataclass(eq=False)
class DiagGmm:
    """Mixture weights, means and diagonal variances (C x D)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        C = self.weights.shape[0]
        if self.means.shape[0] != C or self.variances.shape != self.means.shape:
            raise GmmError(
                f"Inconsistent shapes: weights {self.weights.shape}, means {self.means.shape}, "
                f"variances {self.variances.shape}"
            )
        if np.any(self.variances <= 0):
            raise GmmError("Variances must be positive")

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])


def _check_frames(frames: np.ndarray, dim: int) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] != dim:
        raise GmmError(f"Frame dimension {frames.shape[1]} does not match model dimension {dim}")
    return frames


def _sq_distances(frames: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (np.sum(frames ** 2, axis=1)[:, None] - 2.0 * frames @ centers.T
          + np.sum(centers ** 2, axis=1)[None, :])
    return np.maximum(d2, 0.0)


def kmeans_init(frames: np.ndarray, n_components: int, seed: int) -> np.ndarray:
    """k-means++ seeding followed by 10 Lloyd iterations.

    Empty clusters keep their previous center.

    Raises:
        GmmError: if there are fewer frames than components.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[0]
    if n < n_components:
        raise GmmError(f"k-means needs at least {n_components} frames, got {n}")
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    d2 = _sq_distances(frames, frames[chosen[0]][None, :])[:, 0]
    for _ in range(1, n_components):
        total = float(d2.sum())
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_distances(frames, frames[nxt][None, :])[:, 0])
    centers = frames[chosen].copy()

    for _ in range(KMEANS_ITERS):
        assign = np.argmin(_sq_distances(frames, centers), axis=1)
        counts = np.bincount(assign, minlength=n_components)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, frames)
        occupied = counts > 0
        centers[occupied] = sums[occupied] / counts[occupied, None]
    return centers


def _log_joint(gmm_weights: np.ndarray, means: np.ndarray, variances: np.ndarray,
               frames: np.ndarray) -> np.ndarray:
    """log w_c + log N(x | mu_c, diag var_c) for every frame and component."""
    inv_var = 1.0 / variances
    const = np.log(gmm_weights) - 0.5 * (frames.shape[1] * LOG_2PI + np.sum(np.log(variances), axis=1))
    quad = (frames ** 2) @ inv_var.T - 2.0 * frames @ (means * inv_var).T + np.sum(means ** 2 * inv_var, axis=1)
    return const[None, :] - 0.5 * quad


def posteriors_batch(gmm: DiagGmm, frames: np.ndarray) -> np.ndarray:
    """Responsibilities (n x C) computed in the log domain."""
    frames = _check_frames(frames, gmm.dim)
    if frames.shape[0] == 0:
        return np.zeros((0, gmm.n_components))
    log_joint = _log_joint(gmm.weights, gmm.means, gmm.variances, frames)
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def posteriors(gmm: DiagGmm, frame: np.ndarray) -> np.ndarray:
    """Component responsibilities for a single frame; sums to 1."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or frame.shape[0] != gmm.dim:
        raise GmmError(f"Frame dimension {frame.shape} does not match model dimension {gmm.dim}")
    return posteriors_batch(gmm, frame[None, :])[0]


def log_likelihood(gmm: DiagGmm, frames: np.ndarray) -> float:
    """Total log-likelihood of the frames under the mixture."""
    frames = _check_frames(frames, gmm.dim)
    total = 0.0
    for start in range(0, frames.shape[0], CHUNK_ROWS):
        chunk = frames[start:start + CHUNK_ROWS]
        total += float(np.sum(logsumexp(_log_joint(gmm.weights, gmm.means, gmm.variances, chunk), axis=1)))
    return total


def _floor_weights(occupancy: np.ndarray, floor: float) -> np.ndarray:
    """Maximize sum N_c log w_c subject to sum w = 1 and w_c >= floor."""
    C = occupancy.shape[0]
    floored = np.zeros(C, dtype=bool)
    while True:
        free_mass = 1.0 - floor * np.count_nonzero(floored)
        free_occ = float(np.sum(occupancy[~floored]))
        weights = np.full(C, floor)
        if free_occ > 0:
            weights[~floored] = occupancy[~floored] * (free_mass / free_occ)
        else:
            weights[~floored] = free_mass / max(1, np.count_nonzero(~floored))
        newly = (~floored) & (weights < floor)
        if not np.any(newly):
            return weights
        floored |= newly


def _expectation(weights: np.ndarray, means: np.ndarray, variances: np.ndarray,
                 frames: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Log-likelihood and zeroth/first/second order sufficient statistics.

    Chunks are reduced in a fixed order so the result does not depend on
    how the frames are split.
    """
    C, D = means.shape
    ll = 0.0
    occ = np.zeros(C)
    first = np.zeros((C, D))
    second = np.zeros((C, D))
    for start in range(0, frames.shape[0], CHUNK_ROWS):
        chunk = frames[start:start + CHUNK_ROWS]
        log_joint = _log_joint(weights, means, variances, chunk)
        norm = logsumexp(log_joint, axis=1, keepdims=True)
        resp = np.exp(log_joint - norm)
        ll += float(np.sum(norm))
        occ += resp.sum(axis=0)
        first += resp.T @ chunk
        second += resp.T @ (chunk * chunk)
    return ll, occ, first, second


def em_fit(frames: np.ndarray, n_components: int, max_iters: int = 50, seed: int = 0) -> DiagGmm:
    """Fit a diagonal GMM by EM from a k-means initialization.

    Stops after ``max_iters`` or when the log-likelihood improves by less
    than 1e-6 relative. Variances are floored at 1e-4 of the global
    per-dimension variance; weights at 1e-6. ``log_likelihood_history`` of
    the result holds the value for every parameter set visited, the last
    entry being that of the returned model.

    Raises:
        GmmError: on fewer than 10 frames per component or non-finite input.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n, D = frames.shape
    C = n_components
    if C < 1:
        raise GmmError("n_components must be >= 1")
    if n < MIN_FRAMES_PER_COMPONENT * C:
        raise GmmError(f"EM needs at least {MIN_FRAMES_PER_COMPONENT * C} frames for {C} components, got {n}")
    if not np.all(np.isfinite(frames)):
        raise GmmError("Frames contain non-finite values")

    offset = frames.mean(axis=0)
    X = frames - offset
    global_var = X.var(axis=0)
    var_floor = np.maximum(VARIANCE_FLOOR_RATIO * global_var, 1e-10)

    means = kmeans_init(X, C, seed)
    variances = np.tile(np.maximum(global_var, var_floor), (C, 1))
    weights = np.full(C, 1.0 / C)

    ll, occ, first, second = _expectation(weights, means, variances, X)
    history = [ll]
    for iteration in range(max_iters):
        active = occ > 1e-10
        new_means = means.copy()
        new_means[active] = first[active] / occ[active, None]
        new_vars = variances.copy()
        new_vars[active] = (second[active] / occ[active, None]) - new_means[active] ** 2
        means = new_means
        variances = np.maximum(new_vars, var_floor[None, :])
        weights = _floor_weights(occ, WEIGHT_FLOOR)

        new_ll, occ, first, second = _expectation(weights, means, variances, X)
        history.append(new_ll)
        logger.debug("EM iteration %d: log-likelihood %.6f", iteration + 1, new_ll)
        if new_ll - ll < 1e-6 * abs(ll):
            break
        ll = new_ll

    return DiagGmm(weights, means + offset, variances, history)


def write_gmm(path: PathLike, gmm: DiagGmm) -> Path:
    """Binary layout: "DGMM", u32 C, u32 D, then weights, means, variances as float64."""
    return write_fixed(path, DGMM_MAGIC, (gmm.n_components, gmm.dim),
                       [gmm.weights, gmm.means, gmm.variances], "<f8")


def read_gmm(path: PathLike) -> DiagGmm:
    (C, D), payload = read_fixed(path, DGMM_MAGIC, 2, "<f8")
    expected = C + 2 * C * D
    if payload.size != expected:
        raise BinaryFormatError(f"{path}: expected {expected} values, found {payload.size}")
    weights = payload[:C]
    means = payload[C:C + C * D].reshape(C, D)
    variances = payload[C + C * D:].reshape(C, D)
    return DiagGmm(weights, means, variances)
