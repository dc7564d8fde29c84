"""CSV persistence for paths, per-path sums and reports.

Reals are written with 17 significant digits so they parse back to the
same doubles.
"""

import csv
import logging
import os
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PATH_COLUMNS = ("path_id", "component", "time_index", "time", "value")
SUM_COLUMNS = ("path_id", "compensated", "skorohod", "young", "oracle", "conversion_residual")
VARIATION_COLUMNS = ("method", "rho", "grid_n", "value", "axis_s", "axis_t")


def format_real(value: float) -> str:
    return f"{float(value):.17g}"


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    return str(value)


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> int:
    _ensure_parent(path)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(v) for v in row])
            count += 1
    logger.info("Wrote %d rows to %s", count, path)
    return count


def read_rows(path: str) -> Tuple[List[str], List[List[str]]]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"CSV file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty")
        return header, [row for row in reader if row]


def write_paths(path: str, times: np.ndarray, values: np.ndarray) -> int:
    """values has shape (N, d, n+1)."""

    def rows():
        for pid in range(values.shape[0]):
            for comp in range(values.shape[1]):
                for k, t in enumerate(times):
                    yield pid, comp, k, float(t), float(values[pid, comp, k])

    return write_rows(path, PATH_COLUMNS, rows())


def read_paths(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of write_paths: (times, values of shape (N, d, n+1))."""
    header, rows = read_rows(path)
    if tuple(header) != PATH_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(PATH_COLUMNS)}, got {','.join(header)}")
    if not rows:
        raise ValueError(f"{path} holds no path values")
    data = np.array([[float(v) for v in row] for row in rows])
    ids = data[:, :3].astype(int)
    n_paths, d, size = ids.max(axis=0) + 1
    if data.shape[0] != n_paths * d * size:
        raise ValueError(f"{path}: expected {n_paths * d * size} rows, found {data.shape[0]}")
    if np.unique(ids, axis=0).shape[0] != ids.shape[0]:
        raise ValueError(f"{path}: duplicate (path_id, component, k) rows")
    values = np.empty((n_paths, d, size))
    values[ids[:, 0], ids[:, 1], ids[:, 2]] = data[:, 4]
    times = np.empty(size)
    times[ids[:, 2]] = data[:, 3]
    return times, values


def write_sums(path: str, sums: Dict[str, np.ndarray]) -> int:
    n = len(sums["compensated"])
    rows = ([pid] + [sums[c][pid] for c in SUM_COLUMNS[1:]] for pid in range(n))
    return write_rows(path, SUM_COLUMNS, rows)
