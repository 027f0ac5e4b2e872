"""Tests for the command-line front end."""

import json

import numpy as np
import pandas as pd
import pytest
import yaml

from cough_toolbox import __version__
from cough_toolbox.cli import build_parser, build_run_config, main
from cough_toolbox.utils.validators import ValidationError


def parse(*argv):
    return build_parser().parse_args(list(argv))


def write_embedding_csv(path, n_subjects=3, rows=20, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for s in range(n_subjects):
        center = rng.standard_normal(256)
        for k in range(rows):
            records.append([f"spk{s}", k] + list(center + 0.3 * rng.standard_normal(256)))
    frame = pd.DataFrame(records, columns=["subject_id", "segment_index"] + [f"e{k}" for k in range(256)])
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


class TestParser:
    """Test cases for argument parsing."""

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_command(self):
        assert main(["fly"]) == 2

    def test_missing_required(self):
        assert main(["project", "--csv", "x.csv"]) == 2


class TestRunConfigResolution:
    """Test cases for flag, file and environment precedence."""

    def test_flag_beats_file_beats_env(self, tmp_path, monkeypatch):
        config_path = tmp_path / "run.yaml"
        config_path.write_text(yaml.safe_dump({"seed": 7, "dataset_name": "from_file", "n_grid": [10, 20]}))
        monkeypatch.setenv("COUGH_TOOLBOX_DATASET_NAME", "from_env")
        monkeypatch.setenv("COUGH_TOOLBOX_RANK", "50")
        args = parse("--config", str(config_path), "run-cougher", "--manifest", "m.jsonl",
                     "--out", str(tmp_path), "--seed", "3")
        config = build_run_config(args, "cougher-id")
        assert config.seed == 3
        assert config.dataset_name == "from_file"
        assert config.n_grid == [10, 20]
        assert config.rank == 50

    def test_grid_phrases(self, tmp_path):
        args = parse("run-cougher", "--manifest", "m.jsonl", "--out", str(tmp_path),
                     "--n-grid", "5 to 20 with step of 5", "--t-grid", "2, 5", "--reg-c", "10^i where i=-1, ... 1",
                     "--classifiers", "svm,lda")
        config = build_run_config(args, "cougher-id")
        assert config.n_grid == [5, 10, 15, 20]
        assert config.t_grid == [2.0, 5.0]
        assert config.reg_c == pytest.approx([0.1, 1.0, 10.0])
        assert config.classifiers == ["svm", "lda"]

    def test_workers_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COUGH_TOOLBOX_WORKERS", "3")
        config = build_run_config(parse("run-cougher", "--manifest", "m.jsonl", "--out", str(tmp_path)),
                                  "cougher-id")
        assert config.workers == 3

    def test_cms_default_and_opt_out(self, tmp_path):
        """Cepstral mean subtraction is on unless --no-cms is given."""
        base = ("run-cougher", "--manifest", "m.jsonl", "--out", str(tmp_path))
        assert build_run_config(parse(*base), "cougher-id").cms is True
        assert build_run_config(parse(*base, "--no-cms"), "cougher-id").cms is False
        assert parse("ubm-train", "--manifest", "m.jsonl", "--out", "u.dgmm").cms is True
        assert parse("ubm-train", "--manifest", "m.jsonl", "--out", "u.dgmm", "--no-cms").cms is False

    def test_experiment_kind_is_checked(self, tmp_path):
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps({"experiment": "spotting"}))
        args = parse("--config", str(config_path), "run-cougher", "--manifest", "m.jsonl", "--out", str(tmp_path))
        with pytest.raises(ValidationError):
            build_run_config(args, "cougher-id")

    def test_bad_value(self, tmp_path):
        args = parse("run-cougher", "--manifest", "m.jsonl", "--out", str(tmp_path), "--n-grid", "five")
        with pytest.raises(ValidationError):
            build_run_config(args, "cougher-id")


class TestExitCodes:
    """Test cases for failure exit codes."""

    def test_missing_manifest(self, tmp_path):
        assert main(["run-cougher", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 2

    def test_embedding_feature_without_csv(self, tmp_path):
        assert main(["run-cougher", "--feature", "dvector", "--out", str(tmp_path)]) == 2

    def test_offgrid_frame_length(self, tmp_path):
        code = main(["run-spotting", "--manifest", "m.jsonl", "--out", str(tmp_path), "--frame-lengths", "1000"])
        assert code == 2

    def test_insufficient_subjects(self, tmp_path):
        csv = write_embedding_csv(tmp_path / "d.csv")
        code = main(["run-cougher", "--feature", "dvector", "--embeddings", str(csv), "--out", str(tmp_path / "o"),
                     "--n-grid", "10", "--t-grid", "5", "--classifiers", "lda"])
        assert code == 2

    def test_build_without_inputs(self, tmp_path):
        assert main(["build", "--out", str(tmp_path)]) == 2

    def test_empty_report_directory(self, tmp_path):
        assert main(["report", "--reports", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


class TestCommands:
    """Test cases for the subcommands."""

    def test_build_synthetic(self, tmp_path, capsys):
        code = main(["build", "--synthetic", "--out", str(tmp_path), "--coughers", "2", "--bursts", "3",
                     "--events-per-class", "5"])
        assert code == 0
        assert (tmp_path / "coughs.jsonl").is_file()
        assert (tmp_path / "commands.jsonl").is_file()
        assert "events: 6" in capsys.readouterr().out

    def test_build_scan(self, small_corpus, tmp_path):
        code = main(["build", "--scan", str(small_corpus.root / "coughs"), "--layout", "subject-per-subdirectory",
                     "--out", str(tmp_path)])
        assert code == 0
        lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 18

    def test_build_from_corpora(self, small_corpus, tmp_path):
        """Noise comes from --noise when given."""
        code = main(["build", "--commands", str(small_corpus.root / "commands"),
                     "--coughs", str(small_corpus.root / "coughs"), "--noise", str(small_corpus.root / "noise"),
                     "--variant", "all", "--max-coughs", "4", "--out", str(tmp_path), "--workers", "2"])
        assert code == 0
        assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 48 + 4

    def test_build_without_noise(self, small_corpus, tmp_path):
        """Without --noise the commands corpus must hold background noise."""
        code = main(["build", "--commands", str(small_corpus.root / "commands"),
                     "--coughs", str(small_corpus.root / "coughs"), "--variant", "all", "--out", str(tmp_path)])
        assert code == 2

    def test_features(self, small_corpus, tmp_path, capsys):
        code = main(["features", "--manifest", str(small_corpus.root / "coughs.jsonl"), "--frame-length", "512",
                     "--num-frames", "70", "--out", str(tmp_path), "--workers", "2"])
        assert code == 0
        assert len(list(tmp_path.rglob("*.fmap"))) == 18
        assert "18 feature maps (70x259)" in capsys.readouterr().out

    def test_import_embeddings(self, tmp_path, capsys):
        csv = write_embedding_csv(tmp_path / "d.csv")
        assert main(["import-embeddings", "--csv", str(csv), "--kind", "dvector", "--out", str(tmp_path / "e.csv")]) == 0
        assert (tmp_path / "e.csv").is_file()
        assert "spk2" in capsys.readouterr().out

    def test_import_embeddings_wrong_kind(self, tmp_path):
        csv = write_embedding_csv(tmp_path / "d.csv")
        assert main(["import-embeddings", "--csv", str(csv), "--kind", "xvector"]) == 2

    def test_run_cougher_and_report(self, tmp_path):
        """A rebuilt summary matches the one written by the run."""
        csv = write_embedding_csv(tmp_path / "d.csv")
        out = tmp_path / "run"
        code = main(["run-cougher", "--feature", "dvector", "--embeddings", str(csv), "--out", str(out),
                     "--n-grid", "3", "--t-grid", "5", "--classifiers", "lda,logreg", "--reg-c", "1",
                     "--allow-offgrid", "--dataset-name", "toy", "--workers", "1"])
        assert code == 0
        run_config = json.loads((out / "run_config.json").read_text())
        assert run_config["n_grid"] == [3]
        assert str(csv) in run_config["input_sha256"]
        assert len(list((out / "reports").glob("*.json"))) == 2

        assert main(["report", "--reports", str(out / "reports"), "--out", str(tmp_path / "rebuilt")]) == 0
        assert (tmp_path / "rebuilt" / "summary_cougher.csv").read_text() == (out / "summary.csv").read_text()

    def test_project(self, tmp_path):
        csv = write_embedding_csv(tmp_path / "d.csv", rows=4)
        assert main(["project", "--csv", str(csv), "--out", str(tmp_path / "pca.csv")]) == 0
        frame = pd.read_csv(tmp_path / "pca.csv")
        assert list(frame.columns) == ["cougher_id", "pc1", "pc2"]
        assert len(frame) == 12

    @pytest.mark.slow
    def test_ivector_pipeline(self, small_corpus, tmp_path):
        """UBM, T matrix and i-vector export chained through the CLI."""
        manifest = str(small_corpus.root / "coughs.jsonl")
        ubm, tv, iv = tmp_path / "ubm.dgmm", tmp_path / "t.tvmx", tmp_path / "iv.csv"
        assert main(["ubm-train", "--manifest", manifest, "--out", str(ubm), "--components", "4",
                     "--iters", "5"]) == 0
        assert main(["tv-train", "--manifest", manifest, "--ubm", str(ubm), "--out", str(tv), "--rank", "3",
                     "--iters", "2"]) == 0
        assert main(["ivector", "--manifest", manifest, "--ubm", str(ubm), "--tv", str(tv), "--out", str(iv),
                     "--t", "1", "--subjects", "cougher_01,cougher_02"]) == 0
        frame = pd.read_csv(iv)
        assert len(frame) == 20
        assert list(frame.columns) == ["utterance_id", "cougher_id", "w0", "w1", "w2"]

    @pytest.mark.slow
    def test_run_cougher_ivector(self, small_corpus, tmp_path):
        """The i-vector front end is refitted inside every outer fold."""
        out = tmp_path / "run"
        code = main(["run-cougher", "--manifest", str(small_corpus.root / "coughs.jsonl"), "--out", str(out),
                     "--n-grid", "2", "--t-grid", "2", "--classifiers", "lda", "--components", "4",
                     "--rank", "3", "--ubm-iters", "3", "--tv-iters", "2", "--allow-offgrid", "--workers", "2"])
        assert code == 0
        summary = pd.read_csv(out / "summary.csv")
        assert summary.loc[0, "N"] == 2
        assert 0.0 <= summary.loc[0, "lda_accuracy"] <= 1.0
        report = json.loads(next((out / "reports").glob("*.json")).read_text())
        assert len({f["front_end"] for f in report["fingerprints"]}) == 5

    @pytest.mark.slow
    def test_run_spotting(self, tmp_path):
        """A tiny spotting grid writes the summary, best cells and confusion matrix."""
        corpus = tmp_path / "corpus"
        assert main(["build", "--synthetic", "--out", str(corpus), "--coughers", "2", "--bursts", "5",
                     "--events-per-class", "5", "--variant", "all"]) == 0
        out = tmp_path / "run"
        code = main(["run-spotting", "--manifest", str(corpus / "spotting" / "manifest.jsonl"), "--out", str(out),
                     "--frame-lengths", "512", "--num-frames", "70", "--num-filters", "2", "--dense-size", "4",
                     "--batch-size", "8", "--epochs", "1", "--allow-offgrid", "--workers", "1"])
        assert code == 0
        summary = pd.read_csv(out / "summary.csv")
        assert list(summary.columns) == ["dataset", "frame_length", "num_frames", "accuracy", "kappa",
                                         "sigma_acc", "pooled_accuracy"]
        assert (out / "best_cells.csv").is_file()
        confusion = pd.read_csv(out / "confusion_best.csv")
        assert confusion.drop(columns=["true"]).to_numpy().sum() == 30


class TestEndToEnd:
    """Full-size runs over the default synthetic corpus."""

    @pytest.mark.slow
    def test_ivector_mlp_identifies_five_coughers(self, tmp_path):
        """C=64, R=100 i-vectors with the MLP reach 0.90 on five coughers at 20 s each."""
        corpus = tmp_path / "corpus"
        assert main(["build", "--synthetic", "--out", str(corpus), "--coughers", "5", "--bursts", "40",
                     "--events-per-class", "1"]) == 0
        out = tmp_path / "run"
        code = main(["run-cougher", "--manifest", str(corpus / "coughs.jsonl"), "--out", str(out),
                     "--n-grid", "5", "--t-grid", "20", "--classifiers", "mlp", "--components", "64",
                     "--rank", "100", "--no-cms", "--seed", "0"])
        assert code == 0
        summary = pd.read_csv(out / "summary.csv")
        assert summary.loc[0, "mlp_accuracy"] >= 0.90

    @pytest.mark.slow
    def test_spotting_accuracy_and_kappa(self, tmp_path):
        """F=1024, S=100 over a four-point CNN grid separates the synthetic classes."""
        corpus = tmp_path / "corpus"
        assert main(["build", "--synthetic", "--out", str(corpus), "--events-per-class", "200",
                     "--variant", "all"]) == 0
        out = tmp_path / "run"
        code = main(["run-spotting", "--manifest", str(corpus / "spotting" / "manifest.jsonl"), "--out", str(out),
                     "--frame-lengths", "1024", "--num-frames", "100", "--num-filters", "16, 24",
                     "--dense-size", "16, 32", "--epochs", "10", "--allow-offgrid", "--seed", "0"])
        assert code == 0
        summary = pd.read_csv(out / "summary.csv")
        assert summary.loc[0, "accuracy"] >= 0.95
        assert summary.loc[0, "kappa"] >= 0.90

    @pytest.mark.slow
    def test_seeded_runs_are_byte_identical(self, small_corpus, tmp_path):
        """Two runs with the same seed write the same summary bytes, whatever the worker count."""
        summaries = []
        for run, workers in (("a", "1"), ("b", "3")):
            out = tmp_path / run
            code = main(["run-cougher", "--manifest", str(small_corpus.root / "coughs.jsonl"), "--out", str(out),
                         "--n-grid", "2, 3", "--t-grid", "2", "--classifiers", "lda,logreg", "--components", "4",
                         "--rank", "3", "--ubm-iters", "3", "--tv-iters", "2", "--allow-offgrid", "--seed", "7",
                         "--workers", workers])
            assert code == 0
            summaries.append((out / "summary.csv").read_bytes())
        assert summaries[0] == summaries[1]
