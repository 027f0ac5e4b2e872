"""Stage timing and worker-count helpers."""

import os
import statistics
import threading
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional

import psutil

WORKERS_ENV = "COUGH_TOOLBOX_WORKERS"


def default_worker_count() -> int:
    """Worker pool size: ``COUGH_TOOLBOX_WORKERS`` or the physical core count."""
    env_value = os.getenv(WORKERS_ENV)
    if env_value:
        try:
            workers = int(env_value)
        except ValueError:
            workers = 0
        if workers >= 1:
            return workers
    return max(1, psutil.cpu_count(logical=False) or psutil.cpu_count() or 1)


def memory_usage_mb() -> float:
    """Resident memory of this process in megabytes."""
    return psutil.Process().memory_info().rss / (1024 * 1024)


class PerformanceMonitor:
    """Collect named stage timings and counters; thread-safe."""

    def __init__(self) -> None:
        """Initialize performance monitor."""
        self.metrics: Dict[str, List[float]] = {}
        self.counters: Dict[str, int] = {}
        self.lock = threading.RLock()

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a ``with`` block under ``name``; failures go to ``<name>_error``."""
        start_time = time.perf_counter()
        try:
            yield
        except BaseException:
            self.record_timing(f"{name}_error", time.perf_counter() - start_time)
            raise
        self.record_timing(name, time.perf_counter() - start_time)

    def record_timing(self, metric_name: str, duration: float) -> None:
        """Record timing metric."""
        with self.lock:
            self.metrics.setdefault(metric_name, []).append(duration)

    def increment_counter(self, counter_name: str, value: int = 1) -> None:
        """Increment a counter."""
        with self.lock:
            self.counters[counter_name] = self.counters.get(counter_name, 0) + value

    def get_timing_stats(self, metric_name: str) -> Optional[Dict[str, float]]:
        """Get timing statistics for a metric."""
        with self.lock:
            timings = list(self.metrics.get(metric_name, []))
        if not timings:
            return None
        return {
            "count": len(timings),
            "total": sum(timings),
            "min": min(timings),
            "max": max(timings),
            "mean": statistics.mean(timings),
            "std_dev": statistics.pstdev(timings),
        }

    def get_all_stats(self) -> Dict[str, Any]:
        """Get all performance statistics."""
        with self.lock:
            names = list(self.metrics)
            counters = dict(self.counters)
        timings = {}
        for name in names:
            stats = self.get_timing_stats(name)
            if stats:
                timings[name] = stats
        return {"timings": timings, "counters": counters}

