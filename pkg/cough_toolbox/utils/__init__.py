"""Utility modules shared by the pipelines."""

from .binary_io import BinaryFormatError, read_container, read_fixed, write_container, write_fixed
from .config_manager import ConfigManager
from .formatters import format_duration, format_histogram, format_table
from .hashing import hash_array, hash_file, hash_parts, training_fingerprint
from .logger import JsonFormatter, Logger
from .monitor import PerformanceMonitor, default_worker_count, memory_usage_mb
from .validators import GRIDS, ValidationError, is_on_grid, parse_grid, parse_int_grid, validate_on_grid

__all__ = [
    "BinaryFormatError",
    "read_container",
    "read_fixed",
    "write_container",
    "write_fixed",
    "ConfigManager",
    "format_duration",
    "format_histogram",
    "format_table",
    "hash_array",
    "hash_file",
    "hash_parts",
    "training_fingerprint",
    "JsonFormatter",
    "Logger",
    "PerformanceMonitor",
    "default_worker_count",
    "memory_usage_mb",
    "GRIDS",
    "ValidationError",
    "is_on_grid",
    "parse_grid",
    "parse_int_grid",
    "validate_on_grid",
]
