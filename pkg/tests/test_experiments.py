"""Tests for experiment configuration, subsets and summaries."""

import json

import numpy as np
import pandas as pd
import pytest

from cough_toolbox.classifiers import ClassifierError
from cough_toolbox.dataset import DatasetError
from cough_toolbox.embeddings import EmbeddingError, EmbeddingKind, EmbeddingSet
from cough_toolbox.evaluation import EvaluationError, FoldError
from cough_toolbox.experiments import (
    CellError, RunConfig, best_cells, cougher_summary, embedding_subset, exit_code_for, format_t,
    map_cells, project_embeddings, run_cougher, split_workers, spotting_summary, write_run_config,
)
from cough_toolbox.utils.validators import ValidationError


def xvectors(n_subjects=3, rows=20, seed=0):
    """Separable x-vector rows, segment indices written in reverse."""
    rng = np.random.default_rng(seed)
    ids, segments, vectors = [], [], []
    for s in range(n_subjects):
        center = rng.standard_normal(512)
        for k in reversed(range(rows)):
            ids.append(f"spk{s}")
            segments.append(k)
            vectors.append(center + 0.3 * rng.standard_normal(512))
    return EmbeddingSet(EmbeddingKind.XVECTOR, ids, np.array(segments), np.array(vectors))


def write_xvector_csv(path, embeddings):
    frame = pd.DataFrame(embeddings.vectors, columns=[f"e{k}" for k in range(512)])
    frame.insert(0, "segment_index", embeddings.segment_indices)
    frame.insert(0, "subject_id", embeddings.subject_ids)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


class TestExitCodes:
    """Test cases for mapping failures to exit codes."""

    def test_input_errors(self):
        assert exit_code_for(ValidationError("x")) == 2
        assert exit_code_for(FileNotFoundError("x")) == 2
        assert exit_code_for(EvaluationError("too few samples")) == 2

    def test_wrapped_cause(self):
        """Cell and fold wrappers are looked through."""
        try:
            try:
                raise DatasetError("N too large")
            except DatasetError as inner:
                raise CellError("N=5 t=2", inner) from inner
        except CellError as e:
            assert exit_code_for(e) == 2

    def test_internal_failure(self):
        fold = FoldError(2, "boom")
        fold.__cause__ = ClassifierError("singular")
        cell = CellError("F=512 S=70", fold)
        cell.__cause__ = fold
        assert exit_code_for(cell) == 1
        assert exit_code_for(RuntimeError("x")) == 1


class TestRunConfig:
    """Test cases for run configuration."""

    def test_defaults_validate(self):
        RunConfig("cougher-id", "m.jsonl", "out").validate()

    def test_needs_out_dir(self):
        with pytest.raises(ValidationError):
            RunConfig("cougher-id", "m.jsonl", "").validate()

    def test_embedding_feature_needs_csv(self):
        with pytest.raises(ValidationError):
            RunConfig("cougher-id", "", "out", feature="dvector").validate()

    def test_embedding_feature_needs_no_manifest(self):
        RunConfig("cougher-id", "", "out", feature="xvector", embeddings="x.csv").validate()

    def test_offgrid(self):
        """Off-grid values fail unless explicitly allowed."""
        with pytest.raises(ValidationError):
            RunConfig("spotting", "m.jsonl", "out", frame_lengths=[1000]).validate()
        RunConfig("spotting", "m.jsonl", "out", frame_lengths=[1000], allow_offgrid=True).validate()

    def test_unknown_classifier(self):
        with pytest.raises(ValidationError):
            RunConfig("cougher-id", "m.jsonl", "out", classifiers=["forest"]).validate()

    def test_classifier_grids(self):
        config = RunConfig("cougher-id", "m.jsonl", "out", reg_c=[1.0, 10.0], gamma=[0.1, 1.0, 10.0])
        assert len(config.classifier_grid("svm")) == 6
        assert len(config.classifier_grid("logreg")) == 2
        assert len(config.classifier_grid("lda")) == 1

    def test_cnn_grid(self):
        config = RunConfig("spotting", "m.jsonl", "out", num_filters=[24, 48], dropout=[0.1, 0.3, 0.5], seed=4)
        grid = config.cnn_grid()
        assert len(grid) == 6
        assert all(c.seed == 4 for c in grid)

    def test_write_run_config(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text("{}\n")
        config = RunConfig("cougher-id", str(manifest), str(tmp_path / "out"))
        data = json.loads(write_run_config(config, [manifest]).read_text())
        assert data["n_grid"] == [5]
        assert data["embeddings"] is None
        assert len(data["input_sha256"][str(manifest)]) == 64

    def test_format_t(self):
        assert format_t(None) == "all"
        assert format_t(5.0) == "5"
        assert format_t(2.5) == "2.5"


class TestEmbeddingSubset:
    """Test cases for embedding selection."""

    def test_rows_follow_segment_order(self):
        """t=15 s of x-vectors is 20 rows, taken by segment index."""
        embeddings = xvectors(rows=25)
        data = embedding_subset(embeddings, 2, 15.0)
        assert data.X.shape == (40, 512)
        assert data.class_names == ["spk0", "spk1"]
        first = embeddings.vectors[24]
        assert np.array_equal(data.X[0], first)

    def test_all_rows(self):
        data = embedding_subset(xvectors(rows=7), 3, None)
        assert data.X.shape == (21, 512)

    def test_not_enough_rows(self):
        with pytest.raises(DatasetError):
            embedding_subset(xvectors(rows=10), 2, 15.0)

    def test_random_selection(self):
        a = embedding_subset(xvectors(n_subjects=4), 2, 15.0, seed=3, random_selection=True)
        b = embedding_subset(xvectors(n_subjects=4), 2, 15.0, seed=3, random_selection=True)
        assert a.class_names == b.class_names


class TestSummaries:
    """Test cases for summary tables."""

    def test_cougher_summary(self):
        records = [
            {"dataset": "d", "n_subjects": 10, "t_sec": "5", "feature": "ivector", "classifier": "svm",
             "accuracy": 0.7, "sigma_acc": 0.02},
            {"dataset": "d", "n_subjects": 5, "t_sec": "all", "feature": "ivector", "classifier": "svm",
             "accuracy": 0.9, "sigma_acc": 0.01},
            {"dataset": "d", "n_subjects": 5, "t_sec": "all", "feature": "ivector", "classifier": "logreg",
             "accuracy": 0.8, "sigma_acc": 0.03},
        ]
        summary = cougher_summary(records)
        assert list(summary.columns) == ["dataset", "N", "t", "feature", "logreg_accuracy", "logreg_sigma_acc",
                                         "svm_accuracy", "svm_sigma_acc"]
        assert summary["N"].tolist() == [5, 10]
        assert summary.loc[0, "logreg_accuracy"] == 0.8

    def test_best_cells(self):
        records = [{"dataset": "sc", "frame_length": f, "num_frames": 70, "accuracy": a, "kappa": a,
                    "sigma_acc": 0.0, "pooled_accuracy": a}
                   for f, a in ((512, 0.8), (1024, 0.9), (2048, 0.85), (4096, 0.7))]
        top = best_cells(spotting_summary(records), top=2)
        assert top["frame_length"].tolist() == [1024, 2048]


class TestProjection:
    """Test cases for 2-D PCA."""

    def test_projection(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((6, 4)) * np.array([5.0, 2.0, 0.1, 0.1])
        frame = pd.DataFrame(values, columns=["w0", "w1", "w2", "w3"])
        frame.insert(0, "cougher_id", ["a", "a", "a", "b", "b", "b"])
        frame.insert(0, "utterance_id", [f"u{k}" for k in range(6)])
        frame.to_csv(tmp_path / "iv.csv", index=False)
        result = project_embeddings(tmp_path / "iv.csv", tmp_path / "pca.csv")
        assert list(result.columns) == ["cougher_id", "pc1", "pc2"]
        assert np.allclose(result[["pc1", "pc2"]].mean(axis=0), 0.0)
        assert result["pc1"].var() >= result["pc2"].var()

    def test_matches_svd_projection(self, tmp_path):
        """Scores equal the centered data on the leading right singular vectors, up to sign."""
        rng = np.random.default_rng(1)
        values = rng.standard_normal((10, 3)) * np.array([4.0, 1.0, 0.2])
        frame = pd.DataFrame(values, columns=["w0", "w1", "w2"])
        frame.insert(0, "cougher_id", ["a"] * 5 + ["b"] * 5)
        frame.to_csv(tmp_path / "iv.csv", index=False, float_format="%.17g")
        result = project_embeddings(tmp_path / "iv.csv", tmp_path / "pca.csv")
        centered = values - values.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        expected = centered @ vt[:2].T
        assert np.allclose(np.abs(result[["pc1", "pc2"]].to_numpy()), np.abs(expected), atol=1e-9)

    def test_too_few_vectors(self, tmp_path):
        pd.DataFrame({"cougher_id": ["a", "b"], "w0": [1.0, 2.0]}).to_csv(tmp_path / "iv.csv", index=False)
        with pytest.raises(EmbeddingError):
            project_embeddings(tmp_path / "iv.csv", tmp_path / "pca.csv")


class TestRunCougher:
    """Test cases for the cougher-identification runner."""

    def test_embedding_run(self, tmp_path):
        """Separable x-vectors are identified; one report per cell and classifier."""
        csv = write_xvector_csv(tmp_path / "x.csv", xvectors())
        config = RunConfig("cougher-id", "", str(tmp_path / "out"), feature="xvector", embeddings=str(csv),
                           n_grid=[3], t_grid=[15.0], classifiers=["logreg"], reg_c=[1.0],
                           allow_offgrid=True)
        summary = run_cougher(config)
        assert summary.loc[0, "logreg_accuracy"] >= 0.9
        assert summary.loc[0, "t"] == "15"
        assert (tmp_path / "out" / "reports" / "cougher-id_dataset_N3_t15_xvector_logreg.json").is_file()
        assert (tmp_path / "out" / "summary.csv").is_file()

    def test_failing_cell_is_named(self, tmp_path):
        csv = write_xvector_csv(tmp_path / "x.csv", xvectors())
        config = RunConfig("cougher-id", "", str(tmp_path / "out"), feature="xvector", embeddings=str(csv),
                           n_grid=[5], t_grid=[15.0], classifiers=["lda"])
        with pytest.raises(CellError) as info:
            run_cougher(config)
        assert info.value.cell == "N=5 t=15"
        assert exit_code_for(info.value) == 2

    def test_workers_do_not_change_summary(self, tmp_path):
        """Cells on one thread or on a pool of four give byte-identical summaries."""
        csv = write_xvector_csv(tmp_path / "x.csv", xvectors())

        def summary_bytes(workers):
            out = tmp_path / f"out{workers}"
            config = RunConfig("cougher-id", "", str(out), feature="xvector", embeddings=str(csv),
                               n_grid=[2, 3], t_grid=[7.5, 15.0], classifiers=["lda", "logreg"],
                               reg_c=[1.0, 10.0], l2=[1.0], allow_offgrid=True, workers=workers)
            run_cougher(config)
            return (out / "summary.csv").read_bytes()

        serial = summary_bytes(1)
        assert serial == summary_bytes(4)
        assert len(serial.decode("utf-8").strip().splitlines()) == 5


class TestWorkerPool:
    """Test cases for scheduling grid cells."""

    def test_split_workers(self):
        assert split_workers(4, 2) == (2, 2)
        assert split_workers(4, 1) == (1, 4)
        assert split_workers(1, 6) == (1, 1)
        assert split_workers(8, 3) == (3, 2)

    def test_map_cells_keeps_grid_order(self):
        assert map_cells(lambda c: c * c, [3, 1, 2], workers=3) == [9, 1, 4]

    def test_first_failing_cell_raises(self):
        def fail_odd(cell):
            if cell % 2:
                raise CellError(str(cell), ValueError("odd"))
            return cell

        with pytest.raises(CellError) as info:
            map_cells(fail_odd, [2, 3, 5], workers=3)
        assert info.value.cell == "3"
