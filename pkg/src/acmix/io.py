"""Report files: CSV tables, JSON documents and the ``ACMX1`` binary snapshot.

Snapshot layout (all little-endian)::

    b"ACMX1"              5 bytes of magic
    rows, M               two uint32
    times                 rows float64
    states                rows * M float64, row-major

CSV files are UTF-8 with a header row and LF line endings. Floats are
written with ``repr`` so files round-trip exactly and reruns are
byte-identical.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .dynamics import Trajectory

__all__ = [
    "MAGIC",
    "SnapshotError",
    "write_csv",
    "read_csv",
    "write_json",
    "to_jsonable",
    "write_snapshot",
    "read_snapshot",
    "trajectory_csv",
]

MAGIC = b"ACMX1"
_HEAD = struct.Struct("<5sII")


class SnapshotError(ValueError):
    """Malformed snapshot file."""


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def to_jsonable(obj):
    """Convert numpy containers and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_snapshot(path, times, states) -> Path:
    times = np.ascontiguousarray(times, dtype="<f8").reshape(-1)
    states = np.ascontiguousarray(states, dtype="<f8")
    if states.ndim != 2 or states.shape[0] != times.size:
        raise ValueError("states must have shape (len(times), M)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, times.size, states.shape[1]))
        fh.write(times.tobytes())
        fh.write(states.tobytes())
    return path


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise SnapshotError("file too short for a snapshot header")
    magic, rows, M = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    expected = _HEAD.size + 8 * rows * (M + 1)
    if len(data) != expected:
        raise SnapshotError(f"expected {expected} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEAD.size)
    return body[:rows].astype(float), body[rows:].reshape(rows, M).astype(float)


def trajectory_csv(path, traj: Trajectory) -> Path:
    """``t`` followed by one column per sine coefficient."""
    M = traj.states.shape[-1]
    header = ["t"] + [f"c{k}" for k in range(1, M + 1)]
    rows = ([t, *u] for t, u in zip(traj.times, traj.states))
    return write_csv(path, header, rows)
