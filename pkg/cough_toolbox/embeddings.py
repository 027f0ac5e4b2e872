"""CSV ingestion of externally computed utterance embeddings."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .classifiers import LabeledSet
from .ivector import EmbeddingMatrix

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ID_COLUMNS = ["subject_id", "segment_index"]


class EmbeddingError(Exception):
    """Raised for malformed embedding files or requests."""
    pass


class EmbeddingKind(Enum):
    """Embedding family: (dimension, seconds of audio per row)."""

    IVECTOR = ("ivector", 100, 0.1)
    XVECTOR = ("xvector", 512, 0.75)
    DVECTOR = ("dvector", 256, 0.5)

    def __init__(self, label: str, dim: int, seconds_per_row: float):
        self.label = label
        self.dim = dim
        self.seconds_per_row = seconds_per_row

    @classmethod
    def from_name(cls, name: str) -> "EmbeddingKind":
        for kind in cls:
            if kind.label == name.lower():
                return kind
        raise EmbeddingError(f"Unknown embedding kind {name!r}; expected ivector, xvector or dvector")

    def expected_rows(self, t_sec: float) -> int:
        """round(t / seconds_per_row) rows for t seconds of audio."""
        return int(round(t_sec / self.seconds_per_row))


@dataclass(eq=False)
class EmbeddingSet:
    """Row-ordered embeddings with their subject ids and segment indices."""

    kind: EmbeddingKind
    subject_ids: List[str]
    segment_indices: np.ndarray
    vectors: np.ndarray
    count_warnings: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.segment_indices = np.asarray(self.segment_indices, dtype=np.int64)
        n = len(self.subject_ids)
        if self.vectors.shape != (n, self.kind.dim) or self.segment_indices.shape != (n,):
            raise EmbeddingError(
                f"{self.kind.label} rows must be {self.kind.dim}-dimensional; got vectors "
                f"{self.vectors.shape} for {n} ids"
            )

    def __len__(self) -> int:
        return len(self.subject_ids)

    def subjects(self) -> List[str]:
        return sorted(set(self.subject_ids))

    def rows_per_subject(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for s in self.subject_ids:
            counts[s] = counts.get(s, 0) + 1
        return counts

    @classmethod
    def from_matrices(cls, matrices: Sequence[EmbeddingMatrix],
                      kind: EmbeddingKind = EmbeddingKind.IVECTOR) -> "EmbeddingSet":
        if not matrices:
            raise EmbeddingError("No embedding matrices given")
        ids: List[str] = []
        segments: List[int] = []
        for m in matrices:
            ids.extend([m.subject_id] * m.rows.shape[0])
            segments.extend(range(m.rows.shape[0]))
        return cls(kind, ids, np.asarray(segments), np.vstack([m.rows for m in matrices]))


def _check_counts(result: EmbeddingSet, durations: Dict[str, float]) -> None:
    counts = result.rows_per_subject()
    for subject in sorted(durations):
        expected = result.kind.expected_rows(durations[subject])
        found = counts.get(subject, 0)
        if found != expected:
            message = f"{subject}: {found} {result.kind.label} rows, expected {expected} for {durations[subject]} s"
            result.count_warnings.append(message)
            logger.warning(message)


def import_embeddings(path: PathLike, kind: Union[EmbeddingKind, str],
                      durations: Optional[Dict[str, float]] = None) -> EmbeddingSet:
    """Read ``subject_id, segment_index, e0 .. e{dim-1}`` rows, preserving order.

    ``durations`` maps subject ids to their audio length; row-count
    mismatches against it are logged and recorded, not raised.

    Raises:
        FileNotFoundError: if the file does not exist.
        EmbeddingError: on a wrong column count, non-numeric or non-finite
            fields, or a duplicate (subject, segment) pair.
    """
    kind = EmbeddingKind.from_name(kind) if isinstance(kind, str) else kind
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Embedding file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"subject_id": str}, float_precision="round_trip",
                            encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise EmbeddingError(f"{path}: unreadable CSV ({e})") from e

    if list(frame.columns[:2]) != ID_COLUMNS:
        raise EmbeddingError(f"{path}: first columns must be {ID_COLUMNS}, got {list(frame.columns[:2])}")
    n_values = frame.shape[1] - 2
    if n_values != kind.dim:
        raise EmbeddingError(f"{path}: {n_values} value columns, {kind.label} needs {kind.dim}")

    values = frame.iloc[:, 2:].apply(pd.to_numeric, errors="coerce")
    missing = values.isna().any(axis=1).to_numpy()
    if missing.any():
        row = int(np.argmax(missing))
        raise EmbeddingError(f"{path}: non-numeric or empty field in data row {row + 1}")
    vectors = values.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingError(f"{path}: non-finite value")

    segments = pd.to_numeric(frame["segment_index"], errors="coerce")
    if segments.isna().any() or not np.all(np.equal(np.mod(segments, 1), 0)):
        raise EmbeddingError(f"{path}: segment_index must be an integer")
    duplicated = frame.duplicated(subset=ID_COLUMNS)
    if duplicated.any():
        first = frame[duplicated].iloc[0]
        raise EmbeddingError(f"{path}: duplicate pair ({first['subject_id']}, {first['segment_index']})")

    result = EmbeddingSet(kind, frame["subject_id"].astype(str).tolist(),
                          segments.to_numpy(dtype=np.int64), vectors)
    if durations:
        _check_counts(result, durations)
    logger.info("Imported %d %s rows for %d subjects from %s", len(result), kind.label,
                len(result.subjects()), path)
    return result


def export_embeddings(path: PathLike, embeddings: EmbeddingSet) -> Path:
    """Write the import CSV schema with 17 significant digits."""
    columns = [f"e{k}" for k in range(embeddings.kind.dim)]
    frame = pd.DataFrame(embeddings.vectors, columns=columns)
    frame.insert(0, "segment_index", embeddings.segment_indices)
    frame.insert(0, "subject_id", embeddings.subject_ids)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8", lineterminator="\n")
    return path


def to_labeled_set(embeddings: EmbeddingSet, subjects: Optional[Sequence[str]] = None) -> LabeledSet:
    """Rows of the requested subjects, labelled by sorted subject order.

    ``subjects=None`` keeps every subject.

    Raises:
        EmbeddingError: if a requested subject has no rows.
    """
    available = set(embeddings.subject_ids)
    wanted = sorted(available if subjects is None else set(subjects))
    missing = [s for s in wanted if s not in available]
    if missing:
        raise EmbeddingError(f"Subjects not present in the embeddings: {missing}")
    mapping = {s: i for i, s in enumerate(wanted)}
    keep = [i for i, s in enumerate(embeddings.subject_ids) if s in mapping]
    labels = [mapping[embeddings.subject_ids[i]] for i in keep]
    return LabeledSet(embeddings.vectors[keep], np.asarray(labels, dtype=np.int64),
                      n_classes=len(wanted), class_names=wanted)
