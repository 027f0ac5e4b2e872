#!/usr/bin/env python3
"""Benchmark the main pipeline stages on a synthetic corpus."""

import tempfile

import numpy as np

from cough_toolbox.audio_core import load_clip
from cough_toolbox.classifiers import LabeledSet, train
from cough_toolbox.dataset import SyntheticSpec, generate_synthetic_fixtures
from cough_toolbox.features import FrameSpec, extract_feature_map
from cough_toolbox.ivector import accumulate_stats, train_tv, utterance_frames
from cough_toolbox.ubm import em_fit
from cough_toolbox.utils import PerformanceMonitor, format_duration, format_table, memory_usage_mb


def benchmark_pipeline(seed: int = 0) -> None:
    """Time corpus generation, feature maps, UBM and TV training, and the classifiers."""
    monitor = PerformanceMonitor()

    with tempfile.TemporaryDirectory() as temp_dir:
        print("Running pipeline benchmarks...")
        print("=" * 50)

        with monitor.stage("synthetic_corpus"):
            corpus = generate_synthetic_fixtures(SyntheticSpec(bursts_per_cougher=10, events_per_class=20),
                                                 seed=seed, out_dir=temp_dir)

        clips = [load_clip(e.path) for e in corpus.coughs]
        for frame_len in (512, 1024, 2048, 4096):
            spec = FrameSpec(frame_len, 100)
            for clip in clips:
                with monitor.stage(f"feature_map_F{frame_len}"):
                    extract_feature_map(clip, spec)
                monitor.increment_counter("feature_maps")

        with monitor.stage("mfcc"):
            utterances = [u for clip in clips for u in utterance_frames(clip)]
        monitor.increment_counter("utterances", len(utterances))

        with monitor.stage("ubm_em"):
            gmm = em_fit(np.vstack(utterances), n_components=16, max_iters=10, seed=seed)

        with monitor.stage("baum_welch"):
            stats = [accumulate_stats(gmm, u) for u in utterances]

        with monitor.stage("tv_em"):
            train_tv(stats, gmm, rank=20, iters=3, seed=seed)

        rng = np.random.default_rng(seed)
        centers = rng.standard_normal((5, 64)) * 3.0
        X = np.vstack([c + rng.standard_normal((40, 64)) for c in centers])
        data = LabeledSet(X, np.repeat(np.arange(5), 40))
        for kind in ("logreg", "lda", "svm", "mlp"):
            with monitor.stage(f"train_{kind}"):
                train(kind, data, seed=seed)

    stats_table = monitor.get_all_stats()
    rows = [
        {"stage": name, "count": int(s["count"]), "mean": format_duration(s["mean"]),
         "total": format_duration(s["total"])}
        for name, s in stats_table["timings"].items()
    ]
    print(format_table(rows))
    print(f"\nCounters: {stats_table['counters']}")
    print(f"Resident memory: {memory_usage_mb():.1f} MB")


if __name__ == "__main__":
    benchmark_pipeline()
