"""Dataset ingestion: IDX image files, feature tables, and a synthetic task."""
from __future__ import annotations

import csv
import gzip
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "load_dataset",
    "load_features",
    "load_idx",
    "make_separable",
    "read_idx",
]


class DataError(ValueError):
    pass


_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path) -> np.ndarray:
    """Raw array stored in an IDX file (optionally gzipped)."""
    buf = _read_bytes(path)
    if len(buf) < 4:
        raise DataError(f"{path}: truncated header at offset {len(buf)}")
    if buf[0] != 0 or buf[1] != 0 or buf[2] not in _IDX_TYPES:
        raise DataError(f"{path}: bad magic number {buf[:4].hex()} at offset 0")
    dtype = _IDX_TYPES[buf[2]]
    ndim = buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataError(f"{path}: truncated dimension list at offset {len(buf)}")
    dims = tuple(int(d) for d in np.frombuffer(buf, dtype=">u4", count=ndim, offset=4))
    expected = header + math.prod(dims) * dtype.itemsize
    if len(buf) != expected:
        raise DataError(
            f"{path}: payload size mismatch at offset {header}: "
            f"dims {dims} need {expected - header} bytes, found {len(buf) - header}"
        )
    return np.frombuffer(buf, dtype=dtype, offset=header).reshape(dims)


def load_idx(images_path, labels_path=None, num_classes: int = 10):
    """Images scaled to ``[0, 1]`` as float64, plus labels when given."""
    raw = read_idx(images_path)
    if raw.dtype == np.dtype(">u1"):
        images = raw.astype(np.float64) / 255.0
    else:
        images = raw.astype(np.float64)
    if labels_path is None:
        return images, None
    labels = read_idx(labels_path).astype(np.intp)
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DataError(f"{labels_path}: expected {images.shape[0]} labels, got {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        raise DataError(f"{labels_path}: label {labels[bad[0]]} out of range at index {bad[0]}")
    return images, labels


def _load_csv(path):
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        width = len(header)
        if width < 2:
            raise DataError(f"{path}: need feature columns plus a label column")
        for i, row in enumerate(reader):
            if len(row) != width:
                raise DataError(f"{path}: row {i} has {len(row)} fields, expected {width}")
            try:
                vals = [float(v) for v in row[:-1]]
                lab = float(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}: row {i}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {i} contains a non-finite value")
            if not lab.is_integer():
                raise DataError(f"{path}: row {i} has a non-integer label {row[-1]!r}")
            rows.append(vals)
            labels.append(int(lab))
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width - 1), np.asarray(
        labels, dtype=np.intp
    )


def _load_f32(path, sidecar=None):
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text())
    N, d = int(meta["N"]), int(meta["d"])
    buf = path.read_bytes()
    if len(buf) != 4 * N * d:
        raise DataError(f"{path}: sidecar declares {N}x{d} floats but file holds {len(buf) // 4}")
    X = np.frombuffer(buf, dtype="<f4").reshape(N, d).astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
    if bad.size:
        raise DataError(f"{path}: row {bad[0]} contains a non-finite value")
    labels = meta.get("labels")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.intp)
        if labels.shape != (N,):
            raise DataError(f"{sidecar}: expected {N} labels")
    return X, labels


def load_features(path, sidecar=None):
    """``(X, labels)`` from a CSV table or a little-endian float32 block.

    CSV: header row, ``d`` feature columns, label last.  Binary: ``N*d``
    float32 values with a JSON sidecar ``{"N": .., "d": .., "labels": [...]}``
    (default sidecar path: ``<path>.json``).
    """
    if str(path).endswith(".csv"):
        return _load_csv(path)
    return _load_f32(path, sidecar)


def make_separable(n: int, d: int, rng: np.random.Generator, margin: float = 0.5):
    """Two-class data separated by a margin along a smooth direction.

    Points are ``+-3 v + noise`` where ``v`` is a unit-norm low-frequency
    pattern; points whose signed projection on ``v`` falls below ``margin``
    are redrawn, so the classes are linearly separable.
    """
    t = np.arange(d)
    v = np.cos(2 * np.pi * t / d) + 0.5 * np.sin(4 * np.pi * t / d) + 0.25
    v /= np.linalg.norm(v)
    y = np.arange(n) % 2
    rng.shuffle(y)
    X = np.empty((n, d))
    sign = 2.0 * y - 1.0
    todo = np.arange(n)
    while todo.size:
        X[todo] = 3.0 * sign[todo, None] * v + rng.standard_normal((todo.size, d)) * 0.5
        todo = todo[sign[todo] * (X[todo] @ v) < margin]
    return X, y.astype(np.intp)


def load_dataset(spec: dict, base_dir=".", num_classes: int = 10):
    """Load one dataset entry of a run configuration."""
    base = Path(base_dir)

    def p(key):
        return base / spec[key]

    fmt = spec.get("format")
    if fmt == "idx":
        X, y = load_idx(p("images"), p("labels") if "labels" in spec else None, num_classes)
        X = X.reshape(X.shape[0], -1)
    elif fmt == "csv":
        X, y = load_features(p("path"))
    elif fmt == "f32":
        X, y = load_features(p("path"), p("sidecar") if "sidecar" in spec else None)
    elif fmt == "synthetic":
        rng = np.random.default_rng(spec.get("seed", 0))
        X, y = make_separable(int(spec["n"]), int(spec["d"]), rng, spec.get("margin", 0.5))
    else:
        raise DataError(f"unknown dataset format {fmt!r}")
    if "limit" in spec:
        X = X[: spec["limit"]]
        y = None if y is None else y[: spec["limit"]]
    return X, y
