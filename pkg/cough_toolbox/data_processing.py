"""Tabular and JSON-lines helpers for manifests, reports and summaries."""

import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

PathLike = Union[str, Path]


class DataProcessor:
    """Deterministic CSV / JSON-lines I/O and small summaries."""

    def __init__(self, float_format: str = "%.6f"):
        """Initialize DataProcessor with the float format used for summary CSVs."""
        self.float_format = float_format

    def save_csv(self, data: pd.DataFrame, file_path: PathLike, **kwargs: Any) -> Path:
        """Save DataFrame to CSV with a fixed float format and LF line endings."""
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        kwargs.setdefault("float_format", self.float_format)
        data.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", **kwargs)
        return path

    def load_json_lines(self, file_path: PathLike) -> List[Dict[str, Any]]:
        """Load JSONL file, skipping blank lines."""
        records = []
        with open(file_path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ValueError(f"{file_path}:{line_no}: invalid JSON ({e.msg})") from e
        return records

    def save_json_lines(self, records: Sequence[Dict[str, Any]], file_path: PathLike) -> Path:
        """Save records to JSONL, preserving each record's key order."""
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for record in records:
                f.write(json.dumps(record, ensure_ascii=False) + '\n')
        return path

    def load_json(self, file_path: PathLike) -> Dict[str, Any]:
        """Load a JSON object; decode errors become ValueError naming the file."""
        with open(file_path, 'r', encoding='utf-8') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"{file_path}: invalid JSON ({e.msg})") from e
        if not isinstance(data, dict):
            raise ValueError(f"{file_path}: expected a JSON object")
        return data

    def save_json(self, data: Dict[str, Any], file_path: PathLike) -> Path:
        """Pretty-printed JSON with sorted keys."""
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write('\n')
        return path

    def duration_histogram(self, durations: Sequence[float],
                           bins: int = 10) -> Tuple[List[int], List[float]]:
        """Bin counts and edges of event durations."""
        values = np.asarray(durations, dtype=np.float64)
        if values.size == 0:
            return [], []
        low, high = float(values.min()), float(values.max())
        if high == low:
            high = low + 1e-3
        counts, edges = np.histogram(values, bins=bins, range=(low, high))
        return counts.tolist(), edges.tolist()

    def class_counts(self, labels: Sequence[str]) -> Dict[str, int]:
        """Counts per label, sorted by label."""
        series = pd.Series(list(labels), dtype="object")
        return {str(k): int(v) for k, v in series.value_counts().sort_index().items()}

