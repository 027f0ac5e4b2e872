"""Little-endian binary containers for feature maps and trained models."""

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, Path]


class BinaryFormatError(Exception):
    """Raised when a binary file does not match its expected layout."""
    pass


def write_fixed(path: PathLike, magic: bytes, header: Sequence[int],
                arrays: Sequence[np.ndarray], dtype: str) -> Path:
    """Write ``magic``, u32 header fields, then arrays in row-major order."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack(f"<{len(header)}I", *header))
        for array in arrays:
            f.write(np.ascontiguousarray(array, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())
    return path


def read_fixed(path: PathLike, magic: bytes, n_header: int,
               dtype: str) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Read a file written by :func:`write_fixed`.

    Returns:
        The u32 header fields and the flat payload array.
    """
    data = Path(path).read_bytes()
    head = 4 + 4 * n_header
    if len(data) < head or data[:4] != magic:
        raise BinaryFormatError(f"{path}: expected magic {magic!r}")
    header = struct.unpack(f"<{n_header}I", data[4:head])
    item = np.dtype(dtype).newbyteorder("<")
    payload = data[head:]
    if len(payload) % item.itemsize:
        raise BinaryFormatError(f"{path}: truncated payload")
    return header, np.frombuffer(payload, dtype=item).astype(np.dtype(dtype).newbyteorder("="))


def write_container(path: PathLike, magic: bytes, version: int,
                    header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> Path:
    """Write a versioned container: magic, u32 version, u32 header size,
    JSON header, then float64 arrays in header order."""
    names: List[str] = list(arrays)
    layout = [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]
    body = json.dumps({"meta": header, "arrays": layout}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", version, len(body)))
        f.write(body)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return path


def read_container(path: PathLike, magic: bytes) -> Tuple[int, Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a container written by :func:`write_container`."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != magic:
        raise BinaryFormatError(f"{path}: expected magic {magic!r}")
    version, size = struct.unpack("<II", data[4:12])
    try:
        body = json.loads(data[12:12 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BinaryFormatError(f"{path}: corrupt header") from e

    arrays: Dict[str, np.ndarray] = {}
    offset = 12 + size
    for entry in body["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise BinaryFormatError(f"{path}: truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    return version, body["meta"], arrays
