"""Dataset and CSV serialization.

Binary layout (little-endian)::

    b"RDIV0001" | u64 N | u64 d | u8 has_labels | N*d float64 (row-major) | N int32 labels
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .data import DataMatrix
from .errors import InvalidArgument

MAGIC = b"RDIV0001"
_HEADER = struct.Struct("<8sQQB")


def fmt_float(x) -> str:
    """Render a float with 17 significant digits (round-trips float64)."""
    return format(float(x), ".17g")


def dataset_to_bytes(data: DataMatrix) -> bytes:
    out = [_HEADER.pack(MAGIC, data.rows, data.dim, int(data.has_labels))]
    out.append(np.ascontiguousarray(data.values, dtype="<f8").tobytes())
    if data.has_labels:
        out.append(np.ascontiguousarray(data.labels, dtype="<i4").tobytes())
    return b"".join(out)


def dataset_from_bytes(blob: bytes, n_classes=None) -> DataMatrix:
    if len(blob) < _HEADER.size:
        raise InvalidArgument("truncated dataset header")
    magic, n, d, has_labels = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise InvalidArgument(f"bad magic {magic!r}")
    if has_labels not in (0, 1):
        raise InvalidArgument(f"bad has_labels flag {has_labels}")
    expected = _HEADER.size + 8 * n * d + (4 * n if has_labels else 0)
    if len(blob) != expected:
        raise InvalidArgument(f"dataset payload is {len(blob)} bytes, expected {expected}")
    off = _HEADER.size
    values = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=off + 8 * n * d)
    return DataMatrix(values.astype(np.float64), labels, n_classes if labels is not None else None)


def dataset_to_csv(data: DataMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"x{j}" for j in range(data.dim)]
    if data.has_labels:
        header.append("label")
    w.writerow(header)
    for i in range(data.rows):
        row = [fmt_float(v) for v in data.values[i]]
        if data.has_labels:
            row.append(str(int(data.labels[i])))
        w.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text: str, n_classes=None) -> DataMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InvalidArgument("empty CSV")
    header, body = rows[0], rows[1:]
    has_labels = bool(header) and header[-1] == "label"
    feats = header[:-1] if has_labels else header
    if feats != [f"x{j}" for j in range(len(feats))] or not feats:
        raise InvalidArgument(f"unexpected CSV header {header}")
    if not body:
        raise InvalidArgument("CSV has no data rows")
    try:
        values = np.array([[float(v) for v in r[: len(feats)]] for r in body])
        labels = np.array([int(r[-1]) for r in body]) if has_labels else None
    except (ValueError, IndexError) as exc:
        raise InvalidArgument(f"malformed CSV row: {exc}") from None
    if any(len(r) != len(header) for r in body):
        raise InvalidArgument("ragged CSV rows")
    return DataMatrix(values, labels, n_classes if has_labels else None)


def save_dataset(data: DataMatrix, path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(dataset_to_csv(data))
    else:
        path.write_bytes(dataset_to_bytes(data))


def load_dataset(path, n_classes=None) -> DataMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        return dataset_from_bytes(raw, n_classes)
    return dataset_from_csv(raw.decode(), n_classes)


def write_csv(path, header, rows) -> None:
    """Write a header plus rows; floats are printed with 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())
