"""Manifest-driven corpus assembly, cougher tasks and synthetic fixtures."""

import logging
import os
import re
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import butter, sosfilt

from .audio_core import (
    AudioClip, AudioError, WavFormatError, concatenate, load_clip, mix_at_snr,
    normalize_duration, power, probe_duration, write_wav,
)
from .data_processing import DataProcessor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

COUGH_LABEL = "cough"
BACKGROUND_DIR = "_background_noise_"
SNR_RANGE_DB = (34.0, 73.0)
MAX_COUGHS = 3795
EVENT_SEC = 1.0
TARGET_RATE = 16000
SC11_WORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
VARIANT_CLASSES = {"sc-11": 10, "sc-36": 35}
LAYOUTS = ("class-per-subdirectory", "subject-per-subdirectory")
_NOHASH_RE = re.compile(r"^(?P<speaker>[^_]+)_nohash_")


class DatasetError(Exception):
    """Raised for invalid manifests, corpora or task requests."""
    pass


class InsufficientAudioError(DatasetError):
    """Raised when a subject has less audio than requested."""
    pass


@dataclass
class ManifestEntry:
    """One audio event; field order is the JSON key order."""

    id: str
    path: str
    label: str
    subject: Optional[str] = None
    duration_sec: float = 0.0
    snr_db: Optional[float] = None
    split: str = "all"

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("Manifest entry needs an id")
        if not (self.duration_sec > 0):
            raise DatasetError(f"{self.id}: duration must be > 0, got {self.duration_sec}")

    def to_dict(self) -> Dict[str, Any]:
        return OrderedDict([
            ("id", self.id), ("path", self.path), ("label", self.label),
            ("subject", self.subject), ("duration_sec", self.duration_sec),
            ("snr_db", self.snr_db), ("split", self.split),
        ])

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "ManifestEntry":
        missing = [k for k in ("id", "path", "label", "duration_sec") if k not in record]
        if missing:
            raise DatasetError(f"Manifest record is missing {missing}: {record}")
        subject = record.get("subject")
        snr = record.get("snr_db")
        return cls(
            id=str(record["id"]),
            path=str(record["path"]),
            label=str(record["label"]),
            subject=None if subject is None else str(subject),
            duration_sec=float(record["duration_sec"]),
            snr_db=None if snr is None else float(snr),
            split=str(record.get("split", "all")),
        )


@dataclass
class DatasetManifest:
    """Ordered entries with absolute paths once loaded."""

    entries: List[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise DatasetError(f"Duplicate manifest id: {entry.id}")
            seen.add(entry.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def labels(self) -> List[str]:
        """Distinct labels, sorted."""
        return sorted({e.label for e in self.entries})

    def subjects(self) -> List[str]:
        """Distinct subject ids, sorted."""
        return sorted({e.subject for e in self.entries if e.subject is not None})

    def filter(self, label: Optional[str] = None, subject: Optional[str] = None) -> "DatasetManifest":
        return DatasetManifest([
            e for e in self.entries
            if (label is None or e.label == label) and (subject is None or e.subject == subject)
        ])

    def total_duration(self, subject: Optional[str] = None) -> float:
        return float(sum(e.duration_sec for e in self.entries
                         if subject is None or e.subject == subject))

    def summary(self, bins: int = 10) -> Dict[str, Any]:
        """Class counts, event count, total duration and a duration histogram."""
        processor = DataProcessor()
        counts, edges = processor.duration_histogram([e.duration_sec for e in self.entries], bins)
        return {
            "events": len(self.entries),
            "classes": processor.class_counts([e.label for e in self.entries]),
            "subjects": len(self.subjects()),
            "total_duration_sec": round(self.total_duration(), 6),
            "duration_histogram": {"counts": counts, "edges": edges},
        }


def write_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    """JSON-lines, one entry per line; paths under the manifest directory are stored relative."""
    path = Path(path)
    base = path.parent.resolve()
    records = []
    for entry in manifest.entries:
        record = entry.to_dict()
        entry_path = Path(entry.path)
        if entry_path.is_absolute():
            try:
                record["path"] = entry_path.resolve().relative_to(base).as_posix()
            except ValueError:
                record["path"] = entry_path.as_posix()
        records.append(record)
    return DataProcessor().save_json_lines(records, path)


def read_manifest(path: PathLike) -> DatasetManifest:
    """Read a JSON-lines manifest, resolving relative paths against its directory.

    Raises:
        FileNotFoundError: if the manifest does not exist.
        DatasetError: on malformed records or duplicate ids.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Manifest not found: {path}")
    try:
        records = DataProcessor().load_json_lines(path)
    except ValueError as e:
        raise DatasetError(str(e)) from e
    base = path.parent.resolve()
    entries = []
    for record in records:
        entry = ManifestEntry.from_dict(record)
        if not Path(entry.path).is_absolute():
            entry.path = str(base / entry.path)
        entries.append(entry)
    return DatasetManifest(entries)


def _speaker_from_name(name: str) -> Optional[str]:
    match = _NOHASH_RE.match(name)
    return match.group("speaker") if match else None


def scan_corpus(root: PathLike, layout: str = "class-per-subdirectory",
                label: str = COUGH_LABEL) -> DatasetManifest:
    """One entry per readable WAV file under ``root``, sorted by path.

    ``class-per-subdirectory`` takes the label from the first directory
    level and the subject from ``<speaker>_nohash_<n>.wav`` names;
    ``subject-per-subdirectory`` takes the subject from the first level and
    uses ``label`` for every file.

    Raises:
        FileNotFoundError: if ``root`` is not a directory.
        DatasetError: on an unknown layout or when no file is readable.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {root}")
    if layout not in LAYOUTS:
        raise DatasetError(f"Unknown layout {layout!r}; expected one of {LAYOUTS}")

    entries = []
    for wav in sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".wav"):
        rel = wav.relative_to(root)
        if len(rel.parts) < 2:
            logger.warning("Skipping %s: not inside a subdirectory", wav)
            continue
        try:
            duration = probe_duration(wav)
        except (WavFormatError, OSError) as e:
            logger.warning("Skipping unreadable file %s: %s", wav, e)
            continue
        top = rel.parts[0]
        if layout == "class-per-subdirectory":
            entry_label, subject = top, _speaker_from_name(wav.stem)
        else:
            entry_label, subject = label, top
        entries.append(ManifestEntry(
            id=rel.with_suffix("").as_posix(), path=str(wav.resolve()), label=entry_label,
            subject=subject, duration_sec=duration,
        ))
    if not entries:
        raise DatasetError(f"No readable WAV files under {root}")
    logger.info("Scanned %s: %d files", root, len(entries))
    return DatasetManifest(entries)


def select_command_classes(labels: Sequence[str], variant: str) -> List[str]:
    """Command classes kept by a variant, background noise excluded."""
    available = sorted(l for l in set(labels) if l != BACKGROUND_DIR and l != COUGH_LABEL)
    if variant == "all":
        if not available:
            raise DatasetError("Command corpus has no classes")
        return available
    if variant not in VARIANT_CLASSES:
        raise DatasetError(f"Unknown variant {variant!r}; expected sc-11, sc-36 or all")
    needed = VARIANT_CLASSES[variant]
    if len(available) < needed:
        raise DatasetError(f"{variant} needs {needed} command classes, corpus has {len(available)}")
    if variant == "sc-11" and set(SC11_WORDS) <= set(available):
        return sorted(SC11_WORDS)
    return available[:needed]


def _load_noise_pool(noises: DatasetManifest, sample_rate: int) -> List[AudioClip]:
    pool = []
    for entry in noises:
        clip = load_clip(entry.path, sample_rate)
        if power(clip) <= 1e-12:
            logger.warning("Dropping silent noise file %s", entry.path)
            continue
        pool.append(clip)
    if not pool:
        raise DatasetError("Noise pool is empty or silent")
    return pool


@dataclass(frozen=True)
class _EventPlan:
    source: ManifestEntry
    label: str
    noise_index: int
    snr_db: float
    mix_seed: int
    mixed: bool


def _materialize(plan: _EventPlan, pool: Sequence[AudioClip], out_dir: Path,
                 sample_rate: int) -> ManifestEntry:
    clip = normalize_duration(load_clip(plan.source.path, sample_rate), EVENT_SEC)
    if plan.mixed:
        clip = mix_at_snr(clip, pool[plan.noise_index], plan.snr_db, plan.mix_seed)
    rel = Path("audio") / plan.label / (plan.source.id.replace("/", "__") + ".wav")
    write_wav(out_dir / rel, clip)
    return ManifestEntry(
        id=f"{plan.label}/{plan.source.id}", path=str((out_dir / rel).resolve()),
        label=plan.label, subject=plan.source.subject, duration_sec=EVENT_SEC,
        snr_db=round(plan.snr_db, 6) if plan.mixed else None,
    )


def build_sc_dataset(commands: DatasetManifest, coughs: DatasetManifest, noises: DatasetManifest,
                     variant: str, seed: int, out_dir: PathLike, coughs_only_noise: bool = False,
                     max_coughs: int = MAX_COUGHS, sample_rate: int = TARGET_RATE,
                     workers: int = 1) -> DatasetManifest:
    """Assemble an SC-style spotting corpus with "cough" as an extra class.

    Every event is resampled, trimmed or padded to 1 s and mixed with a
    seeded noise excerpt at an SNR drawn uniformly from [34, 73] dB (only
    the coughs when ``coughs_only_noise``). At most ``max_coughs`` coughs
    are drawn at random. Per-event draws are taken sequentially from one
    generator so the manifest depends only on the inputs and ``seed``.
    """
    if len(coughs) == 0:
        raise DatasetError("Cough manifest is empty")
    classes = select_command_classes(commands.labels(), variant)
    rng = np.random.default_rng(seed)

    cough_entries = list(coughs.entries)
    if len(cough_entries) > max_coughs:
        keep = np.sort(rng.choice(len(cough_entries), size=max_coughs, replace=False))
        cough_entries = [cough_entries[i] for i in keep]

    pool = _load_noise_pool(noises, sample_rate)
    sources: List[Tuple[ManifestEntry, str]] = [
        (e, e.label) for e in commands.entries if e.label in classes
    ] + [(e, COUGH_LABEL) for e in cough_entries]

    plans = []
    for entry, label in sources:
        noise_index = int(rng.integers(len(pool)))
        snr_db = float(rng.uniform(*SNR_RANGE_DB))
        mix_seed = int(rng.integers(2 ** 31 - 1))
        mixed = label == COUGH_LABEL or not coughs_only_noise
        plans.append(_EventPlan(entry, label, noise_index, snr_db, mix_seed, mixed))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        entries = list(executor.map(lambda p: _materialize(p, pool, out_dir, sample_rate), plans))

    manifest = DatasetManifest(entries)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    logger.info("Built %s corpus: %d events, %d classes", variant, len(manifest), len(manifest.labels()))
    return manifest


def subject_audio(manifest: DatasetManifest, subject: str, t_sec: Optional[float],
                  sample_rate: int = TARGET_RATE) -> AudioClip:
    """A subject's events concatenated in manifest order, truncated to ``t_sec``.

    ``t_sec=None`` keeps all audio.

    Raises:
        InsufficientAudioError: if the subject has less than ``t_sec`` seconds.
    """
    entries = [e for e in manifest.entries if e.subject == subject]
    if not entries:
        raise InsufficientAudioError(f"Subject {subject!r} has no audio in the manifest")
    target = None if t_sec is None else int(round(t_sec * sample_rate))
    clips: List[AudioClip] = []
    collected = 0
    for entry in entries:
        clip = load_clip(entry.path, sample_rate)
        clips.append(clip)
        collected += len(clip)
        if target is not None and collected >= target:
            break
    if target is not None and collected < target:
        raise InsufficientAudioError(
            f"Subject {subject!r} has {collected / sample_rate:.3f} s of audio, {t_sec} s requested"
        )
    joined = concatenate(clips)
    if target is None:
        return joined
    return AudioClip(joined.samples[:target], sample_rate)


@dataclass(frozen=True)
class CougherTask:
    """N subjects with t seconds of audio each; ``t_sec=None`` uses all audio."""

    n_subjects: int
    t_sec: Optional[float]
    subjects: Optional[Tuple[str, ...]] = None
    seed: int = 0
    random_selection: bool = False

    def __post_init__(self) -> None:
        if self.n_subjects < 2:
            raise DatasetError(f"A task needs N >= 2 subjects, got {self.n_subjects}")
        if self.t_sec is not None and not (self.t_sec > 0):
            raise DatasetError(f"t must be > 0, got {self.t_sec}")


def eligible_subjects(manifest: DatasetManifest, t_sec: Optional[float]) -> List[str]:
    """Subjects whose summed durations reach ``t_sec``, sorted."""
    return [s for s in manifest.subjects()
            if t_sec is None or manifest.total_duration(s) + 1e-9 >= t_sec]


def build_cougher_task(coughs: DatasetManifest, task: CougherTask,
                       sample_rate: int = TARGET_RATE) -> "OrderedDict[str, AudioClip]":
    """Concatenated, truncated audio for each of the task's N subjects.

    Subjects are the sorted-id prefix of the eligible ones unless listed
    explicitly or ``random_selection`` is set.

    Raises:
        DatasetError: with fewer than N eligible subjects.
    """
    eligible = eligible_subjects(coughs, task.t_sec)
    if task.subjects is not None:
        chosen = list(task.subjects)
        if len(chosen) != task.n_subjects:
            raise DatasetError(f"Task lists {len(chosen)} subjects but N={task.n_subjects}")
        missing = [s for s in chosen if s not in eligible]
        if missing:
            raise DatasetError(f"Subjects without {task.t_sec} s of audio: {missing}")
    else:
        if len(eligible) < task.n_subjects:
            raise DatasetError(
                f"N={task.n_subjects} requested but only {len(eligible)} subjects have "
                f"{'any' if task.t_sec is None else f'{task.t_sec} s of'} audio"
            )
        if task.random_selection:
            rng = np.random.default_rng(task.seed)
            picks = np.sort(rng.choice(len(eligible), size=task.n_subjects, replace=False))
            chosen = [eligible[i] for i in picks]
        else:
            chosen = eligible[:task.n_subjects]
    return OrderedDict((s, subject_audio(coughs, s, task.t_sec, sample_rate)) for s in sorted(chosen))


def build_speaker_task(speech: DatasetManifest, n_subjects: int, seed: int = 0,
                       random_selection: bool = False,
                       sample_rate: int = TARGET_RATE) -> "OrderedDict[str, AudioClip]":
    """Speaker-identification baseline: all audio of each of N speakers."""
    return build_cougher_task(
        speech, CougherTask(n_subjects, None, seed=seed, random_selection=random_selection), sample_rate
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Layout of a synthetic corpus.

    ``signatures`` are (center Hz, bandwidth Hz) band-pass settings, one per
    cougher; ``tone_words`` maps a class name to its fundamental in Hz.
    """

    n_coughers: int = 5
    bursts_per_cougher: int = 40
    signatures: Optional[Tuple[Tuple[float, float], ...]] = None
    tone_words: Tuple[Tuple[str, float], ...] = (
        ("tone_a", 440.0), ("tone_b", 660.0), ("tone_c", 990.0), ("tone_d", 1480.0),
    )
    events_per_class: int = 200
    n_speakers: int = 10
    n_noise_files: int = 3
    noise_sec: float = 5.0
    sample_rate: int = TARGET_RATE

    def resolved_signatures(self) -> List[Tuple[float, float]]:
        if self.signatures is not None:
            return [tuple(s) for s in self.signatures]  # type: ignore[misc]
        return [(500.0 + 700.0 * i, 300.0 + 40.0 * i) for i in range(self.n_coughers)]

    def validate(self) -> None:
        if self.n_coughers < 1 or self.bursts_per_cougher < 1:
            raise DatasetError("Synthetic spec needs at least one cougher and one burst")
        if self.events_per_class < 0 or self.n_noise_files < 0 or self.n_speakers < 1:
            raise DatasetError("Synthetic spec counts must be non-negative")
        signatures = self.resolved_signatures()
        if len(signatures) != self.n_coughers:
            raise DatasetError(f"{len(signatures)} signatures for {self.n_coughers} coughers")
        if len(set(signatures)) != len(signatures):
            raise DatasetError("Two coughers share a spectral signature; the fixture would be ambiguous")
        nyquist = self.sample_rate / 2.0
        for center, bandwidth in signatures:
            if bandwidth <= 0 or center - bandwidth / 2 <= 0 or center + bandwidth / 2 >= nyquist:
                raise DatasetError(f"Signature ({center}, {bandwidth}) does not fit below {nyquist} Hz")
        names = [name for name, _ in self.tone_words]
        if len(set(names)) != len(names) or COUGH_LABEL in names:
            raise DatasetError("Tone-word names must be unique and differ from 'cough'")


@dataclass
class SyntheticCorpus:
    root: Path
    coughs: DatasetManifest
    commands: DatasetManifest
    noises: DatasetManifest


def _cough_burst(rng: np.random.Generator, center: float, bandwidth: float, sr: int) -> np.ndarray:
    duration = rng.uniform(0.7, 0.9)
    n = int(round(duration * sr))
    sos = butter(4, [center - bandwidth / 2, center + bandwidth / 2], btype="bandpass", fs=sr, output="sos")
    burst = sosfilt(sos, rng.standard_normal(n))
    t = np.arange(n) / sr
    attack = np.minimum(1.0, t / 0.01)
    envelope = attack * np.exp(-t / rng.uniform(0.12, 0.2))
    burst = burst * envelope
    return burst * (rng.uniform(0.4, 0.8) / max(np.max(np.abs(burst)), 1e-12))


def _tone_word(rng: np.random.Generator, f0: float, sr: int) -> np.ndarray:
    duration = rng.uniform(0.5, 0.8)
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    f = f0 * (1.0 + rng.uniform(-0.02, 0.02))
    wave = np.sin(2 * np.pi * f * t) + 0.4 * np.sin(2 * np.pi * 2 * f * t + rng.uniform(0, np.pi))
    envelope = np.hanning(n)
    wave = wave * envelope
    return wave * (rng.uniform(0.3, 0.7) / max(np.max(np.abs(wave)), 1e-12))


def _background_noise(rng: np.random.Generator, duration: float, sr: int) -> np.ndarray:
    n = int(round(duration * sr))
    sos = butter(2, 2000.0, btype="lowpass", fs=sr, output="sos")
    noise = sosfilt(sos, rng.standard_normal(n)) + 0.3 * rng.standard_normal(n)
    return noise * (0.3 / max(np.max(np.abs(noise)), 1e-12))


def generate_synthetic_fixtures(spec: SyntheticSpec, seed: int, out_dir: PathLike) -> SyntheticCorpus:
    """Write a deterministic WAV corpus: coughs per synthetic cougher, tone-word
    command classes and background noise, plus one manifest for each.

    Raises:
        DatasetError: if ``spec`` is invalid.
    """
    spec.validate()
    root = Path(out_dir)
    sr = spec.sample_rate
    rng = np.random.default_rng(seed)

    cough_entries = []
    for i, (center, bandwidth) in enumerate(spec.resolved_signatures()):
        subject = f"cougher_{i + 1:02d}"
        for k in range(spec.bursts_per_cougher):
            clip = AudioClip(_cough_burst(rng, center, bandwidth, sr), sr)
            rel = Path("coughs") / subject / f"{subject}_{k:04d}.wav"
            write_wav(root / rel, clip)
            cough_entries.append(ManifestEntry(
                id=rel.with_suffix("").as_posix(), path=str((root / rel).resolve()),
                label=COUGH_LABEL, subject=subject, duration_sec=clip.duration_sec,
            ))

    command_entries = []
    for name, f0 in spec.tone_words:
        for k in range(spec.events_per_class):
            speaker = f"spk{k % spec.n_speakers:02d}"
            clip = AudioClip(_tone_word(rng, f0, sr), sr)
            rel = Path("commands") / name / f"{speaker}_nohash_{k:04d}.wav"
            write_wav(root / rel, clip)
            command_entries.append(ManifestEntry(
                id=rel.with_suffix("").as_posix(), path=str((root / rel).resolve()),
                label=name, subject=speaker, duration_sec=clip.duration_sec,
            ))

    noise_entries = []
    for k in range(spec.n_noise_files):
        clip = AudioClip(_background_noise(rng, spec.noise_sec, sr), sr)
        rel = Path("noise") / BACKGROUND_DIR / f"noise_{k:02d}.wav"
        write_wav(root / rel, clip)
        noise_entries.append(ManifestEntry(
            id=rel.with_suffix("").as_posix(), path=str((root / rel).resolve()),
            label=BACKGROUND_DIR, duration_sec=clip.duration_sec,
        ))

    corpus = SyntheticCorpus(root, DatasetManifest(cough_entries),
                             DatasetManifest(command_entries), DatasetManifest(noise_entries))
    write_manifest(corpus.coughs, root / "coughs.jsonl")
    write_manifest(corpus.commands, root / "commands.jsonl")
    write_manifest(corpus.noises, root / "noise.jsonl")
    logger.info("Synthetic corpus at %s: %d coughs, %d command events, %d noise files",
                root, len(cough_entries), len(command_entries), len(noise_entries))
    return corpus


def load_corpus(source: PathLike, layout: str = "class-per-subdirectory",
                label: str = COUGH_LABEL) -> DatasetManifest:
    """A manifest file is read as-is; a directory is scanned."""
    source = Path(source)
    if source.is_dir():
        return scan_corpus(source, layout, label)
    if not source.exists():
        raise FileNotFoundError(f"Corpus path not found: {source}")
    return read_manifest(source)


def manifest_audio_error(entry: ManifestEntry) -> Optional[str]:
    """Reason an entry's audio is unusable, or None."""
    if not os.path.isfile(entry.path):
        return "missing file"
    try:
        probe_duration(entry.path)
    except AudioError as e:
        return str(e)
    return None
