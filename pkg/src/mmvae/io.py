"""Table and sidecar file formats shared by traces, datasets and reports.

Binary tables: the 4 magic bytes ``MMV1``, rows and cols as little-endian
uint64, then rows*cols little-endian float64 values in row-major order.
Every table may carry a JSON sidecar at ``<path>.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

TABLE_MAGIC = b"MMV1"
_HEADER = struct.Struct("<4sQQ")


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_table_bin(path, table):
    table = np.ascontiguousarray(table, dtype="<f8")
    if table.ndim != 2:
        raise ValueError("table must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TABLE_MAGIC, *table.shape))
        fh.write(table.tobytes())


def read_table_bin(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, rows, cols = _HEADER.unpack(head)
        if magic != TABLE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        data = fh.read()
    if len(data) != rows * cols * 8:
        raise FormatError(f"{path}: expected {rows}x{cols} values, got {len(data) // 8}")
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_table_csv(path, table, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.asarray(table):
            writer.writerow([repr(float(x)) for x in row])


def read_table_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r] for r in reader if r]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_table(path, table, header, meta):
    """Write a table as CSV or binary (by suffix) plus its JSON sidecar."""
    path = Path(path)
    if path.suffix == ".csv":
        write_table_csv(path, table, header)
    else:
        write_table_bin(path, table)
    write_json(sidecar_path(path), dict(meta, columns=list(header)))


def read_table(path):
    """Inverse of :func:`write_table`: returns ``(table, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    meta = read_json(sidecar_path(path))
    if path.suffix == ".csv":
        header, table = read_table_csv(path)
        if header != meta.get("columns", header):
            raise FormatError(f"{path}: CSV header disagrees with sidecar")
    else:
        table = read_table_bin(path)
    return table, meta


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def config_hash(obj):
    """Short stable digest of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serializable: {type(x)}")
