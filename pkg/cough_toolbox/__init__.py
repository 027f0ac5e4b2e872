"""Cough Toolbox: cough spotting and cougher identification from audio."""

__version__ = "0.1.0"
__author__ = "Cough Toolbox Developers"

from .audio_core import AudioClip, load_clip, read_wav, write_wav
from .classifiers import LabeledSet, predict, train
from .data_processing import DataProcessor
from .dataset import DatasetManifest, read_manifest, write_manifest
from .embeddings import EmbeddingKind, EmbeddingSet, import_embeddings
from .evaluation import EvalReport, grid_search_cv
from .features import FrameSpec, MfccConfig, extract_feature_map, mfcc
from .ivector import IVectorExtractor
from .spotting_net import CnnConfig, train_cnn
from .ubm import DiagGmm, em_fit

# Import submodules for convenience
from . import utils

__all__ = [
    "AudioClip",
    "load_clip",
    "read_wav",
    "write_wav",
    "LabeledSet",
    "predict",
    "train",
    "DataProcessor",
    "DatasetManifest",
    "read_manifest",
    "write_manifest",
    "EmbeddingKind",
    "EmbeddingSet",
    "import_embeddings",
    "EvalReport",
    "grid_search_cv",
    "FrameSpec",
    "MfccConfig",
    "extract_feature_map",
    "mfcc",
    "IVectorExtractor",
    "CnnConfig",
    "train_cnn",
    "DiagGmm",
    "em_fit",
    "utils",
]
