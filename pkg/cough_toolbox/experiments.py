"""Cougher-identification and cough-spotting experiment runners.

Each (N, t) or (F, S) grid cell runs the nested cross-validation protocol
and writes one JSON report; summaries are rebuilt from report records so
a run and a later ``report`` call produce the same CSV.
"""

import logging
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.decomposition import PCA

from .audio_core import AudioClip, AudioError, load_clip
from .classifiers import KINDS, LabeledSet, expand_grid
from .data_processing import DataProcessor
from .dataset import (
    CougherTask, DatasetError, DatasetManifest, build_cougher_task, build_speaker_task, read_manifest,
)
from .embeddings import EmbeddingError, EmbeddingKind, EmbeddingSet, import_embeddings
from .evaluation import (
    EvalReport, EvaluationError, FoldError, grid_search_cv, read_report, write_confusion_csv, write_report,
)
from .features import FeatureError, FrameSpec, MfccConfig, extract_feature_map
from .ivector import IVectorExtractor, utterance_frames
from .spotting_net import CnnConfig
from .utils.binary_io import BinaryFormatError
from .utils.config_manager import ConfigManager
from .utils.hashing import hash_array, hash_file, hash_parts
from .utils.monitor import PerformanceMonitor
from .utils.validators import ValidationError, validate_on_grid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EXPERIMENTS = ("cougher-id", "speaker-id", "spotting")
FEATURES = ("ivector", "xvector", "dvector")
SAMPLE_RATE = 16000

# failures caused by the caller's inputs rather than by the toolkit
INPUT_ERRORS = (
    ValidationError, FileNotFoundError, DatasetError, AudioError, EmbeddingError,
    BinaryFormatError, FeatureError,
)


class CellError(Exception):
    """A grid cell failed; ``cell`` names it."""

    def __init__(self, cell: str, cause: BaseException):
        super().__init__(f"cell {cell} failed: {type(cause).__name__}: {cause}")
        self.cell = cell


def exit_code_for(exc: BaseException) -> int:
    """2 for invalid input or insufficient data, 1 for anything else."""
    current: Optional[BaseException] = exc
    while isinstance(current, (CellError, FoldError)):
        current = current.__cause__
    if current is None:
        return 1
    if isinstance(current, INPUT_ERRORS):
        return 2
    if isinstance(current, EvaluationError) and not isinstance(current, FoldError):
        return 2
    return 1


@dataclass
class RunConfig:
    """Resolved settings of one experiment run; flat so it serializes as-is."""

    experiment: str
    manifest: str
    out_dir: str
    dataset_name: str = "dataset"
    seed: int = 0
    workers: int = 1
    allow_offgrid: bool = False
    # cougher / speaker identification
    n_grid: List[int] = field(default_factory=lambda: [5])
    t_grid: List[float] = field(default_factory=lambda: [20.0])
    feature: str = "ivector"
    embeddings: Optional[str] = None
    classifiers: List[str] = field(default_factory=lambda: ["logreg", "lda", "svm", "mlp"])
    random_selection: bool = False
    reg_c: List[float] = field(default_factory=lambda: [1.0, 100.0])
    l1: List[float] = field(default_factory=lambda: [0.0])
    l2: List[float] = field(default_factory=lambda: [0.0])
    gamma: List[float] = field(default_factory=lambda: [0.01, 0.1])
    hidden: List[int] = field(default_factory=lambda: [70])
    mlp_l2: List[float] = field(default_factory=lambda: [0.0])
    standardize: bool = True
    components: int = 64
    rank: int = 100
    ubm_iters: int = 20
    tv_iters: int = 10
    cms: bool = True
    length_norm: bool = False
    # spotting
    frame_lengths: List[int] = field(default_factory=lambda: [1024])
    num_frames: List[int] = field(default_factory=lambda: [100])
    num_filters: List[int] = field(default_factory=lambda: [24])
    kernel_size: List[int] = field(default_factory=lambda: [3])
    dropout: List[float] = field(default_factory=lambda: [0.1])
    dense_size: List[int] = field(default_factory=lambda: [32])
    batch_size: List[int] = field(default_factory=lambda: [64])
    epochs: List[int] = field(default_factory=lambda: [30])

    def validate(self) -> None:
        """Check kinds, required inputs and grid membership.

        Raises:
            ValidationError: on any violation.
        """
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"Unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if not self.out_dir:
            raise ValidationError("An output directory is required (--out)")
        if not self.manifest and (self.experiment == "spotting" or self.feature == "ivector"):
            raise ValidationError("A manifest is required (--manifest)")
        offgrid = self.allow_offgrid
        if self.experiment == "spotting":
            validate_on_grid("frame_length", self.frame_lengths, allow_offgrid=offgrid)
            validate_on_grid("num_frames", self.num_frames, allow_offgrid=offgrid)
            validate_on_grid("num_filters", self.num_filters, allow_offgrid=offgrid)
            validate_on_grid("kernel_size", self.kernel_size, allow_offgrid=offgrid)
            validate_on_grid("dropout", self.dropout, allow_offgrid=offgrid)
            validate_on_grid("dense_size", self.dense_size, allow_offgrid=offgrid)
            validate_on_grid("batch_size", self.batch_size, allow_offgrid=offgrid)
            validate_on_grid("epochs", self.epochs, allow_offgrid=offgrid)
            return
        if self.feature not in FEATURES:
            raise ValidationError(f"Unknown feature {self.feature!r}; expected one of {FEATURES}")
        if self.feature != "ivector" and not self.embeddings:
            raise ValidationError(f"Feature {self.feature} needs an embeddings CSV (--embeddings)")
        unknown = [c for c in self.classifiers if c not in KINDS]
        if unknown or not self.classifiers:
            raise ValidationError(f"Unknown classifiers {unknown}; expected a subset of {KINDS}")
        validate_on_grid("n_subjects", self.n_grid, allow_offgrid=offgrid)
        if self.experiment == "cougher-id":
            validate_on_grid("t_seconds", self.t_grid, allow_offgrid=offgrid)
        validate_on_grid("reg_c", self.reg_c, allow_offgrid=offgrid)
        validate_on_grid("l1", self.l1, allow_offgrid=offgrid)
        validate_on_grid("l2", self.l2, allow_offgrid=offgrid)
        validate_on_grid("gamma", self.gamma, allow_offgrid=offgrid)
        validate_on_grid("hidden", self.hidden, allow_offgrid=offgrid)
        validate_on_grid("l2", self.mlp_l2, allow_offgrid=offgrid)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def classifier_grid(self, kind: str) -> List[Any]:
        if kind == "logreg":
            return expand_grid(kind, reg_c=self.reg_c, l1=self.l1, l2=self.l2, standardize=[self.standardize])
        if kind == "svm":
            return expand_grid(kind, reg_c=self.reg_c, gamma=self.gamma, standardize=[self.standardize])
        if kind == "mlp":
            return expand_grid(kind, hidden=self.hidden, l2=self.mlp_l2, standardize=[self.standardize])
        return expand_grid(kind, standardize=[self.standardize])

    def cnn_grid(self) -> List[CnnConfig]:
        grid = []
        for filters in self.num_filters:
            for kernel in self.kernel_size:
                for rate in self.dropout:
                    for dense in self.dense_size:
                        for batch in self.batch_size:
                            for epochs in self.epochs:
                                grid.append(CnnConfig(int(filters), int(kernel), float(rate), int(dense),
                                                      int(batch), int(epochs), seed=self.seed))
        return grid


def write_run_config(config: RunConfig, inputs: Sequence[PathLike] = ()) -> Path:
    """``run_config.json`` in the output directory: every resolved value plus input hashes."""
    manager = ConfigManager(load_env_file=False)
    manager.merge_config(config.to_dict(), skip_none=False)
    manager.set("input_sha256", {str(p): hash_file(p) for p in inputs if Path(p).is_file()})
    return manager.save_config(Path(config.out_dir) / "run_config.json")


def format_t(t: Optional[float]) -> str:
    return "all" if t is None else f"{t:g}"


def _t_key(value: Any) -> float:
    return math.inf if value in (None, "all") else float(value)


def split_workers(workers: int, n_cells: int) -> Tuple[int, int]:
    """Threads for the cell pool and for each cell's cross-validation.

    The cell pool takes up to one thread per cell; what is left of the
    budget goes to every cell's folds and grid points.
    """
    cell_workers = max(1, min(int(workers), int(n_cells)))
    return cell_workers, max(1, int(workers) // cell_workers)


def map_cells(fn: Callable[[Any], Any], cells: Sequence[Any], workers: int) -> List[Any]:
    """Run ``fn`` over grid cells on a pool; results come back in cell order.

    The first failing cell, in grid order, raises.
    """
    if workers <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, cells))


class IVectorFrontEnd:
    """Fits the UBM and T matrix on training utterances only, memoized per split."""

    def __init__(self, utterances: Sequence[np.ndarray], factory: Callable[[], IVectorExtractor]):
        self.utterances = utterances
        self.factory = factory
        self._cache: Dict[str, Tuple[np.ndarray, np.ndarray, str]] = {}
        self._lock = threading.Lock()

    def __call__(self, train_idx: np.ndarray, test_idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray, str]:
        key = hash_parts([hash_array(train_idx), hash_array(test_idx)])
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        extractor = self.factory().fit([self.utterances[i] for i in train_idx])
        result = (extractor.transform([self.utterances[i] for i in train_idx]),
                  extractor.transform([self.utterances[i] for i in test_idx]),
                  extractor.fingerprint)
        with self._lock:
            self._cache[key] = result
        return result


def _utterance_set(clips: "OrderedDict[str, AudioClip]",
                   mfcc_config: MfccConfig) -> Tuple[List[np.ndarray], np.ndarray, List[str]]:
    utterances: List[np.ndarray] = []
    labels: List[int] = []
    for label, clip in enumerate(clips.values()):
        frames = utterance_frames(clip, mfcc_config)
        utterances.extend(frames)
        labels.extend([label] * len(frames))
    return utterances, np.asarray(labels, dtype=np.int64), list(clips.keys())


def embedding_subset(embeddings: EmbeddingSet, n_subjects: int, t_sec: Optional[float], seed: int = 0,
                     random_selection: bool = False) -> LabeledSet:
    """First round(t / seconds_per_row) rows (by segment index) of N eligible subjects.

    Raises:
        DatasetError: with fewer than N subjects holding enough rows.
    """
    need = embeddings.kind.expected_rows(t_sec) if t_sec is not None else 1
    counts = embeddings.rows_per_subject()
    eligible = sorted(s for s, c in counts.items() if c >= need)
    if len(eligible) < n_subjects:
        raise DatasetError(f"N={n_subjects} requested but only {len(eligible)} subjects have {need} "
                           f"{embeddings.kind.label} rows")
    if random_selection:
        picks = np.sort(np.random.default_rng(seed).choice(len(eligible), size=n_subjects, replace=False))
        chosen = [eligible[i] for i in picks]
    else:
        chosen = eligible[:n_subjects]
    ids = np.asarray(embeddings.subject_ids)
    rows, labels = [], []
    for label, subject in enumerate(chosen):
        idx = np.flatnonzero(ids == subject)
        idx = idx[np.argsort(embeddings.segment_indices[idx], kind="stable")]
        if t_sec is not None:
            idx = idx[:need]
        rows.append(embeddings.vectors[idx])
        labels.extend([label] * idx.shape[0])
    return LabeledSet(np.vstack(rows), np.asarray(labels), n_classes=n_subjects, class_names=chosen)


def _report_path(out_dir: Path, metadata: Dict[str, Any]) -> Path:
    if metadata["experiment"] == "spotting":
        name = f"spotting_{metadata['dataset']}_F{metadata['frame_length']}_S{metadata['num_frames']}"
    else:
        name = (f"{metadata['experiment']}_{metadata['dataset']}_N{metadata['n_subjects']}"
                f"_t{metadata['t_sec']}_{metadata['feature']}_{metadata['classifier']}")
    return out_dir / "reports" / f"{name}.json"


def cougher_summary(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """One row per (dataset, N, t, feature) with accuracy and sigma per classifier."""
    ordered = sorted(records, key=lambda r: (str(r["dataset"]), int(r["n_subjects"]), _t_key(r["t_sec"]),
                                             str(r["feature"])))
    present = {r["classifier"] for r in records}
    classifiers = [k for k in KINDS if k in present]
    rows: "OrderedDict[Tuple[Any, ...], Dict[str, Any]]" = OrderedDict()
    for r in ordered:
        key = (r["dataset"], r["n_subjects"], r["t_sec"], r["feature"])
        row = rows.setdefault(key, {"dataset": r["dataset"], "N": r["n_subjects"], "t": r["t_sec"],
                                    "feature": r["feature"]})
        row[f"{r['classifier']}_accuracy"] = r["accuracy"]
        row[f"{r['classifier']}_sigma_acc"] = r["sigma_acc"]
    columns = ["dataset", "N", "t", "feature"]
    for c in classifiers:
        columns += [f"{c}_accuracy", f"{c}_sigma_acc"]
    return pd.DataFrame(list(rows.values()), columns=columns)


def spotting_summary(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """One row per (dataset, F, S): mean accuracy, kappa and sigma."""
    ordered = sorted(records, key=lambda r: (str(r["dataset"]), int(r["frame_length"]), int(r["num_frames"])))
    columns = ["dataset", "frame_length", "num_frames", "accuracy", "kappa", "sigma_acc", "pooled_accuracy"]
    return pd.DataFrame([{c: r[c] for c in columns} for r in ordered], columns=columns)


def best_cells(summary: pd.DataFrame, top: int = 3) -> pd.DataFrame:
    """Highest-accuracy cells per dataset, ties kept in grid order."""
    ranked = summary.sort_values(["dataset", "accuracy"], ascending=[True, False], kind="mergesort")
    return ranked.groupby("dataset", sort=True).head(top).reset_index(drop=True)


def report_record(report: EvalReport) -> Dict[str, Any]:
    record = dict(report.metadata)
    record.update(accuracy=report.mean_accuracy, sigma_acc=report.sigma_acc, kappa=report.mean_kappa,
                  pooled_accuracy=report.pooled_accuracy)
    return record


def _subject_clips(config: RunConfig, manifest: DatasetManifest,
                   n_subjects: int, t_sec: Optional[float]) -> "OrderedDict[str, AudioClip]":
    if config.experiment == "speaker-id":
        return build_speaker_task(manifest, n_subjects, config.seed, config.random_selection, SAMPLE_RATE)
    task = CougherTask(n_subjects, t_sec, seed=config.seed, random_selection=config.random_selection)
    return build_cougher_task(manifest, task, SAMPLE_RATE)


def run_cougher(config: RunConfig, monitor: Optional[PerformanceMonitor] = None) -> pd.DataFrame:
    """Nested CV for every (N, t, classifier) cell; writes reports and ``summary.csv``.

    Cells run on the ``workers`` pool and are merged in grid order, so the
    summary does not depend on the worker count.

    Raises:
        CellError: naming the first failing cell.
    """
    config.validate()
    monitor = monitor or PerformanceMonitor()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(config.manifest) if config.feature == "ivector" else None
    embeddings = None
    if config.feature != "ivector":
        embeddings = import_embeddings(str(config.embeddings), EmbeddingKind.from_name(config.feature))
    mfcc_config = MfccConfig(mean_normalize=config.cms)
    t_values: List[Optional[float]] = [None] if config.experiment == "speaker-id" else list(config.t_grid)
    cells = [(int(n), t) for n in config.n_grid for t in t_values]
    cell_workers, cv_workers = split_workers(config.workers, len(cells))

    def run_cell(key: Tuple[int, Optional[float]]) -> List[Dict[str, Any]]:
        n_subjects, t_sec = key
        cell = f"N={n_subjects} t={format_t(t_sec)}"
        records = []
        try:
            with monitor.stage("prepare_cell"):
                front_end: Optional[IVectorFrontEnd] = None
                if manifest is not None:
                    clips = _subject_clips(config, manifest, n_subjects, t_sec)
                    utterances, labels, names = _utterance_set(clips, mfcc_config)
                    data = LabeledSet(np.arange(labels.shape[0], dtype=np.float64)[:, None], labels,
                                      n_classes=len(names), class_names=names)
                    front_end = IVectorFrontEnd(utterances, lambda: IVectorExtractor(
                        config.components, config.rank, config.ubm_iters, config.tv_iters,
                        config.seed, config.length_norm))
                else:
                    assert embeddings is not None
                    data = embedding_subset(embeddings, n_subjects, t_sec, config.seed, config.random_selection)
            for kind in config.classifiers:
                with monitor.stage(f"cv_{kind}"):
                    report = grid_search_cv(data, kind, config.classifier_grid(kind), config.seed,
                                            front_end=front_end, workers=cv_workers)
                report.metadata = {
                    "experiment": config.experiment, "dataset": config.dataset_name,
                    "n_subjects": n_subjects, "t_sec": format_t(t_sec),
                    "feature": config.feature, "classifier": kind,
                }
                write_report(report, _report_path(out_dir, report.metadata))
                records.append(report_record(report))
                logger.debug("Cell %s %s: accuracy %.4f, sigma %.4f", cell, kind,
                             report.mean_accuracy, report.sigma_acc)
        except Exception as e:
            raise CellError(cell, e) from e
        return records

    by_cell = dict(zip(cells, map_cells(run_cell, cells, cell_workers)))
    summary = cougher_summary([r for key in cells for r in by_cell[key]])
    DataProcessor().save_csv(summary, out_dir / "summary.csv")
    return summary


def _feature_maps(manifest: DatasetManifest, spec: FrameSpec, workers: int) -> np.ndarray:
    def one(path: str) -> np.ndarray:
        return extract_feature_map(load_clip(path, SAMPLE_RATE), spec).values.astype(np.float32)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        maps = list(executor.map(one, [e.path for e in manifest.entries]))
    return np.stack(maps)


def run_spotting(config: RunConfig, monitor: Optional[PerformanceMonitor] = None) -> pd.DataFrame:
    """Nested CV of the CNN grid for every (F, S) cell.

    Writes one report per cell, ``summary.csv``, ``best_cells.csv`` and the
    confusion matrix of the best cell as ``confusion_best.csv``.
    """
    config.validate()
    monitor = monitor or PerformanceMonitor()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(config.manifest)
    class_names = manifest.labels()
    if len(class_names) < 2:
        raise DatasetError("Spotting needs at least 2 classes in the manifest")
    index = {name: i for i, name in enumerate(class_names)}
    labels = np.asarray([index[e.label] for e in manifest.entries], dtype=np.int64)
    grid = config.cnn_grid()
    cells = [(int(f), int(s)) for f in config.frame_lengths for s in config.num_frames]
    cell_workers, cv_workers = split_workers(config.workers, len(cells))

    def run_cell(key: Tuple[int, int]) -> EvalReport:
        frame_length, num_frames = key
        cell = f"F={frame_length} S={num_frames}"
        try:
            with monitor.stage("features"):
                maps = _feature_maps(manifest, FrameSpec(frame_length, num_frames), cv_workers)
            data = LabeledSet(maps, labels, n_classes=len(class_names), class_names=class_names)
            with monitor.stage("cv_cnn"):
                report = grid_search_cv(data, "cnn", grid, config.seed, workers=cv_workers)
        except Exception as e:
            raise CellError(cell, e) from e
        report.metadata = {"experiment": "spotting", "dataset": config.dataset_name,
                           "frame_length": frame_length, "num_frames": num_frames}
        write_report(report, _report_path(out_dir, report.metadata))
        logger.debug("Cell %s: accuracy %.4f, kappa %.4f", cell, report.mean_accuracy, report.mean_kappa)
        return report

    by_cell = dict(zip(cells, map_cells(run_cell, cells, cell_workers)))
    records = []
    best: Optional[EvalReport] = None
    for key in cells:
        report = by_cell[key]
        records.append(report_record(report))
        if best is None or report.mean_accuracy > best.mean_accuracy:
            best = report

    summary = spotting_summary(records)
    processor = DataProcessor()
    processor.save_csv(summary, out_dir / "summary.csv")
    processor.save_csv(best_cells(summary), out_dir / "best_cells.csv")
    if best is not None:
        write_confusion_csv(best, out_dir / "confusion_best.csv")
    return summary


def project_embeddings(csv_path: PathLike, out_path: PathLike) -> pd.DataFrame:
    """Two-component PCA of an i-vector or embedding CSV: (cougher_id, pc1, pc2).

    Component signs are fixed so the largest loading is positive.

    Raises:
        EmbeddingError: on fewer than 3 vectors or an unknown layout.
    """
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    if "cougher_id" in frame.columns:
        ids, values = frame["cougher_id"], frame.drop(columns=["cougher_id", "utterance_id"], errors="ignore")
    elif "subject_id" in frame.columns:
        ids, values = frame["subject_id"], frame.drop(columns=["subject_id", "segment_index"], errors="ignore")
    else:
        raise EmbeddingError(f"{csv_path}: expected a cougher_id or subject_id column")
    X = values.to_numpy(dtype=np.float64)
    if X.shape[0] < 3:
        raise EmbeddingError(f"{csv_path}: PCA needs at least 3 vectors, got {X.shape[0]}")
    pca = PCA(n_components=min(2, X.shape[1]), svd_solver="full").fit(X)
    components = pca.components_
    signs = np.sign(components[np.arange(components.shape[0]), np.argmax(np.abs(components), axis=1)])
    projected = pca.transform(X) * signs
    if projected.shape[1] < 2:
        projected = np.hstack([projected, np.zeros((projected.shape[0], 1))])
    result = pd.DataFrame({"cougher_id": ids.astype(str), "pc1": projected[:, 0], "pc2": projected[:, 1]})
    DataProcessor(float_format="%.9g").save_csv(result, out_path)
    return result


def summarize_reports(report_dir: PathLike, out_dir: PathLike) -> Dict[str, Path]:
    """Rebuild summary CSVs from the report JSON files under ``report_dir``."""
    paths = sorted(Path(report_dir).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"No report files under {report_dir}")
    cougher, spotting = [], []
    for path in paths:
        record = report_record(read_report(path))
        if record.get("experiment") == "spotting":
            spotting.append(record)
        elif record.get("experiment") in EXPERIMENTS:
            cougher.append(record)
        else:
            logger.warning("Skipping %s: report has no experiment metadata", path)
    processor = DataProcessor()
    written = {}
    out_dir = Path(out_dir)
    if cougher:
        written["cougher"] = processor.save_csv(cougher_summary(cougher), out_dir / "summary_cougher.csv")
    if spotting:
        summary = spotting_summary(spotting)
        written["spotting"] = processor.save_csv(summary, out_dir / "summary_spotting.csv")
        written["best_cells"] = processor.save_csv(best_cells(summary), out_dir / "best_cells.csv")
    return written
