"""Command-line front end: ``cough-toolbox <subcommand> ...``.

Exit codes: 0 on success, 2 on invalid input or insufficient data, 1 on
any other failure.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .audio_core import load_clip
from .dataset import (
    BACKGROUND_DIR, COUGH_LABEL, LAYOUTS, MAX_COUGHS, DatasetError, DatasetManifest, SyntheticSpec,
    build_sc_dataset, generate_synthetic_fixtures, load_corpus, read_manifest, subject_audio,
    write_manifest,
)
from .embeddings import EmbeddingKind, export_embeddings, import_embeddings
from .experiments import (
    RunConfig, exit_code_for, format_t, project_embeddings, run_cougher, run_spotting,
    summarize_reports, write_run_config,
)
from .features import FrameSpec, MfccConfig, extract_feature_map, write_feature_map
from .ivector import (
    accumulate_stats, build_cougher_matrix, export_ivectors_csv, read_tv, train_tv,
    utterance_frames, write_tv,
)
from .ubm import em_fit, read_gmm, write_gmm
from .utils.config_manager import ConfigManager
from .utils.formatters import format_duration, format_histogram, format_table
from .utils.logger import Logger
from .utils.monitor import PerformanceMonitor, default_worker_count
from .utils.validators import ValidationError, parse_grid, parse_int_grid

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}


def _coerce(value: Any, default: Any) -> Any:
    """Bring a flag, file or environment value to the type of its default."""
    if value is None:
        return None
    if isinstance(default, bool):
        return value if isinstance(value, bool) else str(value).strip().lower() in _TRUE
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        sample = default[0] if default else ""
        if isinstance(value, str):
            if isinstance(sample, str):
                return [v.strip() for v in value.split(",") if v.strip()]
            return parse_int_grid(value) if isinstance(sample, int) else [float(v) for v in parse_grid(value)]
        if isinstance(sample, int):
            return parse_int_grid(",".join(str(v) for v in value))
        if isinstance(sample, float):
            return [float(v) for v in value]
        return [str(v) for v in value]
    return str(value)


def build_run_config(args: argparse.Namespace, experiment: str,
                     allowed: Sequence[str] = ("cougher-id", "speaker-id")) -> RunConfig:
    """Resolve every RunConfig field: flag > config file > environment > default.

    Raises:
        ValidationError: on an unparsable value, an experiment kind outside
            ``allowed`` or any RunConfig.validate failure.
    """
    manager = ConfigManager(args.config) if args.config else ConfigManager()
    defaults = RunConfig(experiment=experiment, manifest="", out_dir="", workers=default_worker_count())
    values: Dict[str, Any] = {}
    for f in fields(RunConfig):
        default = getattr(defaults, f.name)
        resolved = manager.resolve(f.name, getattr(args, f.name, None), default)
        try:
            values[f.name] = _coerce(resolved, default)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Invalid value for {f.name}: {resolved!r}") from e
    if values["experiment"] not in allowed:
        raise ValidationError(f"Experiment {values['experiment']!r} cannot run here; expected one of {list(allowed)}")
    config = RunConfig(**values)
    config.validate()
    return config


def _print_summary(manifest: DatasetManifest) -> None:
    summary = manifest.summary()
    print(f"events: {summary['events']}  subjects: {summary['subjects']}  "
          f"duration: {format_duration(summary['total_duration_sec'])}")
    print(format_table([{"class": k, "events": v} for k, v in summary["classes"].items()]))
    hist = summary["duration_histogram"]
    print(format_histogram(hist["counts"], hist["edges"]))


def _log_timings(log: Logger, monitor: PerformanceMonitor) -> None:
    for name in sorted(monitor.metrics):
        stats = monitor.get_timing_stats(name)
        if stats:
            log.log_timing(name, stats["total"], count=int(stats["count"]))


def cmd_build(args: argparse.Namespace, log: Logger) -> int:
    out_dir = Path(args.out)
    if args.synthetic:
        spec = SyntheticSpec(n_coughers=args.coughers, bursts_per_cougher=args.bursts,
                             events_per_class=args.events_per_class)
        corpus = generate_synthetic_fixtures(spec, args.seed, out_dir)
        manifest = corpus.coughs
        if args.variant:
            manifest = build_sc_dataset(corpus.commands, corpus.coughs, corpus.noises, args.variant, args.seed,
                                        out_dir / "spotting", args.coughs_only_noise, args.max_coughs,
                                        workers=args.workers or default_worker_count())
    elif args.scan:
        manifest = load_corpus(args.scan, args.layout, args.label)
        write_manifest(manifest, out_dir / "manifest.jsonl")
    else:
        if not (args.commands and args.coughs):
            raise ValidationError("build needs --synthetic, --scan, or both --commands and --coughs")
        if not args.variant:
            raise ValidationError("build from corpora needs --variant")
        commands = load_corpus(args.commands, "class-per-subdirectory")
        coughs = load_corpus(args.coughs, "subject-per-subdirectory", COUGH_LABEL)
        if args.noise:
            noises = load_corpus(args.noise, "class-per-subdirectory")
        else:
            noises = commands.filter(label=BACKGROUND_DIR)
        if len(noises) == 0:
            raise DatasetError(f"No background noise: pass --noise or add {BACKGROUND_DIR}/ to the commands")
        manifest = build_sc_dataset(commands, coughs, noises, args.variant, args.seed, out_dir,
                                    args.coughs_only_noise, args.max_coughs,
                                    workers=args.workers or default_worker_count())
    _print_summary(manifest)
    return 0


def cmd_features(args: argparse.Namespace, log: Logger) -> int:
    manifest = read_manifest(args.manifest)
    spec = FrameSpec(args.frame_length, args.num_frames)
    out_dir = Path(args.out)

    def one(entry: Any) -> int:
        fmap = extract_feature_map(load_clip(entry.path, args.sample_rate), spec)
        write_feature_map(out_dir / f"{entry.id}.fmap", fmap)
        return fmap.degenerate_frames

    with ThreadPoolExecutor(max_workers=args.workers or default_worker_count()) as executor:
        degenerate = list(executor.map(one, manifest.entries))
    print(f"{len(degenerate)} feature maps ({spec.num_frames}x{spec.feature_dim}) written to {out_dir}; "
          f"{sum(degenerate)} degenerate frames")
    return 0


def _manifest_utterances(manifest: DatasetManifest, mfcc_config: MfccConfig) -> List[np.ndarray]:
    subjects = manifest.subjects()
    if not subjects:
        raise DatasetError("Manifest has no subject ids")
    utterances: List[np.ndarray] = []
    for subject in subjects:
        utterances.extend(utterance_frames(subject_audio(manifest, subject, None), mfcc_config))
    return utterances


def _mfcc_config(args: argparse.Namespace) -> MfccConfig:
    return MfccConfig(mean_normalize=args.cms)


def cmd_ubm_train(args: argparse.Namespace, log: Logger) -> int:
    frames = np.vstack(_manifest_utterances(read_manifest(args.manifest), _mfcc_config(args)))
    gmm = em_fit(frames, args.components, args.iters, args.seed)
    write_gmm(args.out, gmm)
    log.info("UBM written", path=args.out, frames=frames.shape[0], components=args.components)
    return 0


def cmd_tv_train(args: argparse.Namespace, log: Logger) -> int:
    gmm = read_gmm(args.ubm)
    utterances = _manifest_utterances(read_manifest(args.manifest), _mfcc_config(args))
    tv = train_tv([accumulate_stats(gmm, u) for u in utterances], gmm, args.rank, args.iters, args.seed)
    write_tv(args.out, tv)
    log.info("T matrix written", path=args.out, utterances=len(utterances), rank=args.rank)
    return 0


def cmd_ivector(args: argparse.Namespace, log: Logger) -> int:
    manifest = read_manifest(args.manifest)
    gmm = read_gmm(args.ubm)
    tv = read_tv(args.tv, gmm)
    subjects = args.subjects.split(",") if args.subjects else manifest.subjects()
    matrices = [build_cougher_matrix(manifest, s, args.t, gmm, tv, _mfcc_config(args)) for s in subjects]
    export_ivectors_csv(args.out, matrices)
    print(f"{sum(m.rows.shape[0] for m in matrices)} i-vectors for {len(matrices)} subjects "
          f"(t={format_t(args.t)}) written to {args.out}")
    return 0


def cmd_import_embeddings(args: argparse.Namespace, log: Logger) -> int:
    durations = None
    if args.manifest:
        manifest = read_manifest(args.manifest)
        durations = {s: manifest.total_duration(s) for s in manifest.subjects()}
    embeddings = import_embeddings(args.csv, EmbeddingKind.from_name(args.kind), durations)
    counts = embeddings.rows_per_subject()
    print(format_table([{"subject_id": s, "rows": counts[s]} for s in embeddings.subjects()]))
    if embeddings.count_warnings:
        print(f"{len(embeddings.count_warnings)} subjects with unexpected row counts")
    if args.out:
        export_embeddings(args.out, embeddings)
    return 0


def cmd_run_cougher(args: argparse.Namespace, log: Logger) -> int:
    config = build_run_config(args, "cougher-id")
    write_run_config(config, [p for p in (config.manifest, config.embeddings) if p])
    monitor = PerformanceMonitor()
    summary = run_cougher(config, monitor)
    for row in summary.to_dict("records"):
        for kind in config.classifiers:
            log.log_cell(config.experiment, f"N={row['N']} t={row['t']}", row[f"{kind}_accuracy"],
                         row[f"{kind}_sigma_acc"], feature=row["feature"], classifier=kind)
    _log_timings(log, monitor)
    print(format_table(summary.round(4).to_dict("records")))
    return 0


def cmd_run_spotting(args: argparse.Namespace, log: Logger) -> int:
    config = build_run_config(args, "spotting", allowed=("spotting",))
    write_run_config(config, [config.manifest])
    monitor = PerformanceMonitor()
    summary = run_spotting(config, monitor)
    for row in summary.to_dict("records"):
        log.log_cell("spotting", f"F={row['frame_length']} S={row['num_frames']}", row["accuracy"],
                     row["sigma_acc"], kappa=round(row["kappa"], 6))
    _log_timings(log, monitor)
    print(format_table(summary.round(4).to_dict("records")))
    return 0


def cmd_project(args: argparse.Namespace, log: Logger) -> int:
    result = project_embeddings(args.csv, args.out)
    print(f"{len(result)} projected vectors written to {args.out}")
    return 0


def cmd_report(args: argparse.Namespace, log: Logger) -> int:
    written = summarize_reports(args.reports, args.out)
    for name, path in written.items():
        print(f"{name}: {path}")
    return 0


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    """Flags shared by the experiment subcommands; dests match RunConfig fields."""
    parser.add_argument("--manifest", help="Dataset manifest (JSON lines)")
    parser.add_argument("--out", dest="out_dir", help="Output directory")
    parser.add_argument("--dataset-name", dest="dataset_name")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int, help="Worker threads (default: COUGH_TOOLBOX_WORKERS or cores)")
    parser.add_argument("--allow-offgrid", dest="allow_offgrid", action="store_true", default=None,
                        help="Accept values outside the reference grids")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cough-toolbox",
                                     description="Cough spotting and cougher identification experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--log-file")
    parser.add_argument("--json-logs", action="store_true")
    parser.add_argument("--config", help="Flat JSON/YAML run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="Build manifests and corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--synthetic", action="store_true", help="Generate the synthetic fixture corpus")
    p.add_argument("--coughers", type=int, default=5)
    p.add_argument("--bursts", type=int, default=40)
    p.add_argument("--events-per-class", type=int, default=200)
    p.add_argument("--scan", help="Scan a WAV directory into a manifest")
    p.add_argument("--layout", choices=LAYOUTS, default="class-per-subdirectory")
    p.add_argument("--label", default=COUGH_LABEL)
    p.add_argument("--commands", help="Speech-commands directory or manifest")
    p.add_argument("--coughs", help="Cough directory (one subdirectory per subject) or manifest")
    p.add_argument("--noise", help="Background-noise directory or manifest")
    p.add_argument("--variant", choices=("sc-11", "sc-36", "all"))
    p.add_argument("--coughs-only-noise", action="store_true")
    p.add_argument("--max-coughs", type=int, default=MAX_COUGHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_build)

    p = sub.add_parser("features", help="Extract spotting feature maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--frame-length", type=int, required=True)
    p.add_argument("--num-frames", type=int, required=True)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_features)

    for name, handler in (("ubm-train", cmd_ubm_train), ("tv-train", cmd_tv_train), ("ivector", cmd_ivector)):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--no-cms", dest="cms", action="store_false",
                       help="Skip per-utterance cepstral mean subtraction")
        p.add_argument("--seed", type=int, default=0)
        if name == "ubm-train":
            p.add_argument("--components", type=int, default=64)
            p.add_argument("--iters", type=int, default=20)
        else:
            p.add_argument("--ubm", required=True)
        if name == "tv-train":
            p.add_argument("--rank", type=int, default=100)
            p.add_argument("--iters", type=int, default=10)
        if name == "ivector":
            p.add_argument("--tv", required=True)
            p.add_argument("--t", type=float, help="Seconds per subject (default: all audio)")
            p.add_argument("--subjects", help="Comma-separated subject ids")
        p.set_defaults(handler=handler)

    p = sub.add_parser("import-embeddings", help="Validate an x-/d-vector CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", required=True, choices=[k.label for k in EmbeddingKind])
    p.add_argument("--manifest", help="Manifest giving per-subject durations for count checks")
    p.add_argument("--out", help="Re-export the validated rows")
    p.set_defaults(handler=cmd_import_embeddings)

    p = sub.add_parser("run-cougher", help="Cougher (or speaker) identification grid")
    _add_run_options(p)
    p.add_argument("--experiment", choices=("cougher-id", "speaker-id"))
    p.add_argument("--n-grid", dest="n_grid", help='e.g. "5 to 50 with step of 5"')
    p.add_argument("--t-grid", dest="t_grid", help='e.g. "2, 5 to 100 with step of 5"')
    p.add_argument("--feature", choices=("ivector", "xvector", "dvector"))
    p.add_argument("--embeddings", help="Imported embedding CSV for xvector/dvector")
    p.add_argument("--classifiers", help="Comma list of logreg, lda, svm, mlp")
    p.add_argument("--random-selection", dest="random_selection", action="store_true", default=None)
    p.add_argument("--reg-c", dest="reg_c")
    p.add_argument("--l1")
    p.add_argument("--l2")
    p.add_argument("--gamma")
    p.add_argument("--hidden")
    p.add_argument("--mlp-l2", dest="mlp_l2")
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)
    p.add_argument("--components", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--ubm-iters", dest="ubm_iters", type=int)
    p.add_argument("--tv-iters", dest="tv_iters", type=int)
    p.add_argument("--no-cms", dest="cms", action="store_false", default=None)
    p.add_argument("--length-norm", dest="length_norm", action="store_true", default=None)
    p.set_defaults(handler=cmd_run_cougher)

    p = sub.add_parser("run-spotting", help="Cough-spotting CNN grid")
    _add_run_options(p)
    p.add_argument("--frame-lengths", dest="frame_lengths", help='e.g. "2^k, k=9, ... 12"')
    p.add_argument("--num-frames", dest="num_frames", help='e.g. "10 × k, k=7, 10, 12, 15"')
    p.add_argument("--num-filters", dest="num_filters")
    p.add_argument("--kernel-size", dest="kernel_size")
    p.add_argument("--dropout")
    p.add_argument("--dense-size", dest="dense_size")
    p.add_argument("--batch-size", dest="batch_size")
    p.add_argument("--epochs")
    p.set_defaults(handler=cmd_run_spotting)

    p = sub.add_parser("project", help="2-D PCA of an i-vector or embedding CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_project)

    p = sub.add_parser("report", help="Rebuild summary CSVs from report JSON files")
    p.add_argument("--reports", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) if not isinstance(e.code, str) else 2

    try:
        log = Logger(level=args.log_level, log_file=args.log_file, json_format=args.json_logs)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    handler: Callable[[argparse.Namespace, Logger], int] = args.handler
    try:
        return handler(args, log)
    except Exception as e:
        code = exit_code_for(e)
        log.error(f"{args.command} failed", exception=e, exit_code=code)
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
