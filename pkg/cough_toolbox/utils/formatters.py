"""Formatting utilities for console summaries."""

from typing import Any, Dict, List, Optional, Sequence, Union


def format_duration(seconds: float, precision: int = 2) -> str:
    """Format duration in seconds as human-readable string."""
    if seconds < 0:
        return "0s"
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.2f}s"

    units = [("d", 86400), ("h", 3600), ("m", 60), ("s", 1)]
    parts = []
    remaining = seconds
    for unit_name, unit_seconds in units:
        if remaining >= unit_seconds:
            value = int(remaining // unit_seconds)
            remaining = remaining % unit_seconds
            parts.append(f"{value}{unit_name}")
        if len(parts) >= precision:
            break
    return " ".join(parts)


def format_table(data: Sequence[Dict[str, Any]], headers: Optional[List[str]] = None) -> str:
    """Format list of dictionaries as an ASCII table."""
    if not data:
        return "No data"

    if headers is None:
        headers = list(data[0].keys())

    col_widths = {h: len(str(h)) for h in headers}
    for row in data:
        for h in headers:
            col_widths[h] = max(col_widths[h], len(str(row.get(h, ''))))

    lines = ["| " + " | ".join(h.ljust(col_widths[h]) for h in headers) + " |",
             "| " + " | ".join("-" * col_widths[h] for h in headers) + " |"]
    for row in data:
        lines.append("| " + " | ".join(str(row.get(h, '')).ljust(col_widths[h])
                                       for h in headers) + " |")
    return "\n".join(lines)


def format_histogram(counts: Sequence[int], edges: Sequence[Union[int, float]],
                     width: int = 40, unit: str = "s") -> str:
    """Render bin counts as horizontal bars."""
    if not counts:
        return "No data"
    peak = max(counts) or 1
    lines = []
    for i, count in enumerate(counts):
        bar = "#" * int(round(width * count / peak))
        lines.append(f"{edges[i]:>7.2f}-{edges[i + 1]:<7.2f}{unit} {bar} {count}")
    return "\n".join(lines)
