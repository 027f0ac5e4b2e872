"""Baum-Welch statistics, total-variability training and i-vector extraction."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .audio_core import AudioClip
from .dataset import DatasetManifest, subject_audio
from .features import MfccConfig, mfcc
from .ubm import DiagGmm, GmmError, em_fit, posteriors_batch
from .utils.binary_io import BinaryFormatError, read_fixed, write_fixed
from .utils.hashing import hash_array, hash_parts

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TVMX_MAGIC = b"TVMX"
DEFAULT_RANK = 100
UTTERANCE_SEC = 0.1
INIT_SCALE = 0.001
JITTER = 1e-10
BATCH_UTTERANCES = 256


class IVectorError(Exception):
    """Raised for invalid statistics, models or utterances."""
    pass


@dataclass(eq=False)
class BaumWelchStats:
    """Zeroth-order occupancies (C) and first-order stats centered on the UBM means (C x D)."""

    n: np.ndarray
    f: np.ndarray

    def __post_init__(self) -> None:
        self.n = np.asarray(self.n, dtype=np.float64)
        self.f = np.atleast_2d(np.asarray(self.f, dtype=np.float64))
        if self.f.shape[0] != self.n.shape[0]:
            raise IVectorError(f"Stats shapes disagree: N {self.n.shape}, F {self.f.shape}")
        if np.any(self.n < 0) or not (np.all(np.isfinite(self.n)) and np.all(np.isfinite(self.f))):
            raise IVectorError("Occupancies must be finite and non-negative")


@dataclass(eq=False)
class TvModel:
    """Total-variability matrix T ((C*D) x R) tied to its UBM."""

    T: np.ndarray
    gmm: DiagGmm
    objective_history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.T = np.asarray(self.T, dtype=np.float64)
        C, D = self.gmm.n_components, self.gmm.dim
        if self.T.ndim != 2 or self.T.shape[0] != C * D or self.T.shape[1] < 1:
            raise IVectorError(f"T has shape {self.T.shape}, expected ({C * D}, R)")
        if not np.all(np.isfinite(self.T)):
            raise IVectorError("T contains non-finite values")

    @property
    def rank(self) -> int:
        return int(self.T.shape[1])


@dataclass(frozen=True, eq=False)
class IVector:
    w: np.ndarray
    utterance_id: str = ""
    cougher_id: str = ""


@dataclass(eq=False)
class EmbeddingMatrix:
    """One subject's embeddings, one row per 0.1-s utterance."""

    rows: np.ndarray
    subject_id: str
    utterance_ids: List[str]


def segment_utterances(clip: AudioClip, seg_sec: float = UTTERANCE_SEC) -> List[AudioClip]:
    """Non-overlapping ``seg_sec`` segments from the head; the remainder is dropped."""
    seg_len = int(round(seg_sec * clip.sample_rate))
    if seg_len <= 0 or len(clip) < seg_len:
        raise IVectorError(f"Clip of {clip.duration_sec:.3f} s is shorter than one {seg_sec} s segment")
    count = len(clip) // seg_len
    return [AudioClip(clip.samples[i * seg_len:(i + 1) * seg_len], clip.sample_rate)
            for i in range(count)]


def accumulate_stats(gmm: DiagGmm, frames: np.ndarray) -> BaumWelchStats:
    """N_c = sum gamma_c(x_t); F_c = sum gamma_c(x_t) (x_t - mu_c)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.size == 0:
        frames = frames.reshape(0, gmm.dim)
    frames = np.atleast_2d(frames)
    if frames.shape[1] != gmm.dim:
        raise IVectorError(f"Frame dimension {frames.shape[1]} does not match UBM dimension {gmm.dim}")
    if frames.shape[0] == 0:
        return BaumWelchStats(np.zeros(gmm.n_components), np.zeros((gmm.n_components, gmm.dim)))
    gamma = posteriors_batch(gmm, frames)
    n = gamma.sum(axis=0)
    f = gamma.T @ frames - n[:, None] * gmm.means
    return BaumWelchStats(n, f)


def _stack(stats_list: Sequence[BaumWelchStats], gmm: DiagGmm) -> Tuple[np.ndarray, np.ndarray]:
    C, D = gmm.n_components, gmm.dim
    for s in stats_list:
        if s.n.shape != (C,) or s.f.shape != (C, D):
            raise IVectorError(f"Stats of shape {s.f.shape} do not match UBM ({C}, {D})")
    N = np.stack([s.n for s in stats_list])
    F = np.stack([s.f.reshape(-1) for s in stats_list])
    return N, F


def _precision_terms(T: np.ndarray, gmm: DiagGmm) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component T_c' S_c^-1 T_c (C x R*R) and S^-1 T ((C*D) x R)."""
    C, D = gmm.n_components, gmm.dim
    R = T.shape[1]
    inv_var = (1.0 / gmm.variances).reshape(-1)
    weighted = T * inv_var[:, None]
    Tc = T.reshape(C, D, R)
    Wc = weighted.reshape(C, D, R)
    per_component = np.einsum("cdr,cds->crs", Tc, Wc).reshape(C, R * R)
    return per_component, weighted


def _posterior(T: np.ndarray, gmm: DiagGmm, N: np.ndarray, F: np.ndarray,
               need_second: bool) -> Tuple[np.ndarray, Optional[np.ndarray], float]:
    """Posterior means (U x R), second moments (U x R x R) and the
    stats log-likelihood ``sum 0.5 b'L^-1 b - 0.5 log|L|`` up to a constant."""
    R = T.shape[1]
    per_component, weighted = _precision_terms(T, gmm)
    U = N.shape[0]
    means = np.empty((U, R))
    second = np.empty((U, R, R)) if need_second else None
    objective = 0.0
    eye = np.eye(R)
    for start in range(0, U, BATCH_UTTERANCES):
        stop = min(start + BATCH_UTTERANCES, U)
        L = eye[None, :, :] + (N[start:stop] @ per_component).reshape(-1, R, R)
        b = F[start:stop] @ weighted
        for k in range(stop - start):
            try:
                factor = cho_factor(L[k], lower=True)
            except LinAlgError as e:
                raise IVectorError("Posterior precision is not positive definite") from e
            w = cho_solve(factor, b[k])
            means[start + k] = w
            logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
            objective += 0.5 * float(b[k] @ w) - 0.5 * logdet
            if second is not None:
                second[start + k] = cho_solve(factor, eye) + np.outer(w, w)
    return means, second, objective


def _solve_component(A: np.ndarray, rhs: np.ndarray, component: int) -> np.ndarray:
    """Solve A X = rhs for symmetric positive definite A, retrying with jitter."""
    try:
        return cho_solve(cho_factor(A, lower=True), rhs)
    except LinAlgError:
        logger.warning("Cholesky failed for component %d; retrying with jitter %.0e", component, JITTER)
    try:
        return cho_solve(cho_factor(A + JITTER * np.eye(A.shape[0]), lower=True), rhs)
    except LinAlgError as e:
        raise IVectorError(f"Singular M-step system for component {component}") from e


def train_tv(stats_list: Sequence[BaumWelchStats], gmm: DiagGmm, rank: int = DEFAULT_RANK,
             iters: int = 10, seed: int = 0) -> TvModel:
    """Train the total-variability matrix by EM.

    T starts from seeded Gaussian entries scaled by 0.001. Each M-step
    solves, per component, ``T_c A_c = C_c`` with
    ``A_c = sum_u N_c(u) E[w w']_u`` and ``C_c = sum_u f_c(u) E[w]_u'``.
    Components with zero total occupancy keep their rows. The stats
    log-likelihood of every visited T is kept in ``objective_history``.

    Raises:
        IVectorError: on fewer than 2 utterances or a singular system.
    """
    if len(stats_list) < 2:
        raise IVectorError(f"train_tv needs at least 2 utterances, got {len(stats_list)}")
    if rank < 1:
        raise IVectorError("rank must be >= 1")
    if len(stats_list) < rank:
        logger.warning("Training T of rank %d on only %d utterances", rank, len(stats_list))

    C, D = gmm.n_components, gmm.dim
    N, F = _stack(stats_list, gmm)
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((C * D, rank)) * INIT_SCALE

    history: List[float] = []
    for iteration in range(iters):
        W, Eww, objective = _posterior(T, gmm, N, F, need_second=True)
        history.append(objective)
        logger.debug("TV iteration %d: objective %.6f", iteration + 1, objective)

        A = (N.T @ Eww.reshape(N.shape[0], -1)).reshape(C, rank, rank)
        Cmat = (F.T @ W).reshape(C, D, rank)
        occupancy = N.sum(axis=0)
        T_new = T.reshape(C, D, rank).copy()
        for c in range(C):
            if occupancy[c] <= 0:
                continue
            T_new[c] = _solve_component(A[c], Cmat[c].T, c).T
        T = T_new.reshape(C * D, rank)

    _, _, final = _posterior(T, gmm, N, F, need_second=False)
    history.append(final)
    return TvModel(T, gmm, history)


def extract_ivector(tv: TvModel, stats: BaumWelchStats, utterance_id: str = "",
                    cougher_id: str = "") -> IVector:
    """Posterior mean w = (I + T' S^-1 N T)^-1 T' S^-1 f."""
    N, F = _stack([stats], tv.gmm)
    w, _, _ = _posterior(tv.T, tv.gmm, N, F, need_second=False)
    return IVector(w[0], utterance_id, cougher_id)


def extract_ivectors(tv: TvModel, stats_list: Sequence[BaumWelchStats]) -> np.ndarray:
    """Batch extraction, one row per statistics object."""
    if not stats_list:
        return np.zeros((0, tv.rank))
    N, F = _stack(stats_list, tv.gmm)
    w, _, _ = _posterior(tv.T, tv.gmm, N, F, need_second=False)
    return w


def length_normalize(matrix: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; zero rows stay zero."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def utterance_frames(clip: AudioClip, config: MfccConfig = MfccConfig(),
                     seg_sec: float = UTTERANCE_SEC) -> List[np.ndarray]:
    """MFCC frames for each 0.1-s utterance of a clip."""
    return [mfcc(segment, config) for segment in segment_utterances(clip, seg_sec)]


def build_cougher_matrix(manifest: DatasetManifest, cougher: str, t: Optional[float], gmm: DiagGmm,
                         tv: TvModel, mfcc_config: MfccConfig = MfccConfig(),
                         sample_rate: int = 16000) -> EmbeddingMatrix:
    """Concatenate a cougher's coughs, truncate to ``t`` s and embed each 0.1-s utterance.

    ``t=None`` embeds all of the cougher's audio.

    Raises:
        InsufficientAudioError: when the cougher has less than ``t`` seconds.
    """
    clip = subject_audio(manifest, cougher, t, sample_rate)
    stats = [accumulate_stats(gmm, frames) for frames in utterance_frames(clip, mfcc_config)]
    rows = extract_ivectors(tv, stats)
    expected = int(round(t / UTTERANCE_SEC)) if t is not None else rows.shape[0]
    if rows.shape[0] != expected:
        raise IVectorError(f"{cougher}: produced {rows.shape[0]} rows, expected {expected}")
    ids = [f"{cougher}-{i:05d}" for i in range(rows.shape[0])]
    return EmbeddingMatrix(rows, cougher, ids)


class IVectorExtractor:
    """UBM + total-variability front end fitted on training utterances only.

    ``fit`` takes per-utterance MFCC matrices; ``transform`` maps utterances
    to i-vectors with the fitted models.
    """

    def __init__(self, n_components: int = 64, rank: int = DEFAULT_RANK, ubm_iters: int = 20,
                 tv_iters: int = 10, seed: int = 0, normalize_length: bool = False):
        self.n_components = n_components
        self.rank = rank
        self.ubm_iters = ubm_iters
        self.tv_iters = tv_iters
        self.seed = seed
        self.normalize_length = normalize_length
        self.gmm: Optional[DiagGmm] = None
        self.tv: Optional[TvModel] = None
        self.fingerprint = ""

    def fit(self, utterances: Sequence[np.ndarray]) -> "IVectorExtractor":
        if len(utterances) < 2:
            raise IVectorError("Front end needs at least 2 training utterances")
        pooled = np.vstack(utterances)
        try:
            self.gmm = em_fit(pooled, self.n_components, self.ubm_iters, self.seed)
        except GmmError as e:
            raise IVectorError(f"UBM training failed: {e}") from e
        stats = [accumulate_stats(self.gmm, u) for u in utterances]
        self.tv = train_tv(stats, self.gmm, self.rank, self.tv_iters, self.seed)
        self.fingerprint = hash_parts([hash_array(pooled), str(len(utterances))])
        logger.info("Front end fitted: %d utterances, %d frames, C=%d, R=%d",
                    len(utterances), pooled.shape[0], self.n_components, self.rank)
        return self

    def transform(self, utterances: Sequence[np.ndarray]) -> np.ndarray:
        if self.gmm is None or self.tv is None:
            raise IVectorError("IVectorExtractor is not fitted")
        gmm = self.gmm
        rows = extract_ivectors(self.tv, [accumulate_stats(gmm, u) for u in utterances])
        return length_normalize(rows) if self.normalize_length else rows


def write_tv(path: PathLike, tv: TvModel) -> Path:
    """Binary layout: "TVMX", u32 C, u32 D, u32 R, float64 T row-major."""
    return write_fixed(path, TVMX_MAGIC, (tv.gmm.n_components, tv.gmm.dim, tv.rank), [tv.T], "<f8")


def read_tv(path: PathLike, gmm: DiagGmm) -> TvModel:
    (C, D, R), payload = read_fixed(path, TVMX_MAGIC, 3, "<f8")
    if (C, D) != (gmm.n_components, gmm.dim):
        raise IVectorError(f"{path}: T built for C={C}, D={D}; UBM has C={gmm.n_components}, D={gmm.dim}")
    if payload.size != C * D * R:
        raise BinaryFormatError(f"{path}: expected {C * D * R} values, found {payload.size}")
    return TvModel(payload.reshape(C * D, R), gmm)


def export_ivectors_csv(path: PathLike, matrices: Sequence[EmbeddingMatrix]) -> Path:
    """CSV rows: utterance_id, cougher_id, then the i-vector components."""
    frames = []
    for m in matrices:
        df = pd.DataFrame(m.rows, columns=[f"w{k}" for k in range(m.rows.shape[1])])
        df.insert(0, "cougher_id", m.subject_id)
        df.insert(0, "utterance_id", m.utterance_ids)
        frames.append(df)
    if not frames:
        raise IVectorError("Nothing to export")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
    return path
