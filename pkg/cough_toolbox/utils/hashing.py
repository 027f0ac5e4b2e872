"""Content fingerprints for models, folds and input files."""

import hashlib
from pathlib import Path
from typing import Iterable, Union

import numpy as np


def hash_array(array: np.ndarray) -> str:
    """SHA-256 over dtype, shape and little-endian contents."""
    arr = np.ascontiguousarray(array)
    hasher = hashlib.sha256()
    hasher.update(arr.dtype.newbyteorder("<").str.encode("ascii"))
    hasher.update(repr(arr.shape).encode("ascii"))
    hasher.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return hasher.hexdigest()


def hash_parts(parts: Iterable[str]) -> str:
    """Combine several digests into one."""
    hasher = hashlib.sha256()
    for part in parts:
        hasher.update(part.encode("utf-8"))
        hasher.update(b"\x00")
    return hasher.hexdigest()


def hash_file(file_path: Union[str, Path], algorithm: str = "sha256",
              chunk_size: int = 65536) -> str:
    """Hash file contents using specified algorithm."""
    if algorithm not in hashlib.algorithms_available:
        raise ValueError(f"Algorithm {algorithm} not available")
    hasher = hashlib.new(algorithm)
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def training_fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    """Fingerprint of a training portion (features and labels)."""
    return hash_parts([hash_array(np.asarray(X)), hash_array(np.asarray(y, dtype=np.int64))])
