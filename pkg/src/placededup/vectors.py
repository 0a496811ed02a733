"""Plain-text keyed vector files.

First line ``"N D"``, then ``N`` lines of ``key x1 ... xD``. Floats are written
with ``repr`` so a write/read cycle is bit-exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def write_vectors(path, keys, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(keys):
        raise FormatError(f"{len(keys)} keys for matrix of shape {matrix.shape}")
    lines = [f"{matrix.shape[0]} {matrix.shape[1]}"]
    for key, row in zip(keys, matrix.tolist()):
        key = str(key)
        if not key or any(ch.isspace() for ch in key):
            raise FormatError(f"key {key!r} is empty or contains whitespace")
        lines.append(key + " " + " ".join(repr(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_vectors(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be 'N D', got {header!r}")
        try:
            n, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer header {header!r}") from None
        if n < 0 or dim < 1:
            raise FormatError(f"{path}: bad header {n} {dim}")
        keys: list[str] = []
        matrix = np.empty((n, dim), dtype=np.float64)
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(keys) == n:
                raise FormatError(f"{path}:{lineno}: more rows than header declares ({n})")
            if len(parts) != dim + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            try:
                matrix[len(keys)] = [float(v) for v in parts[1:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            keys.append(parts[0])
    if len(keys) != n:
        raise FormatError(f"{path}: header declares {n} rows, found {len(keys)}")
    if not np.all(np.isfinite(matrix)):
        raise FormatError(f"{path}: non-finite values")
    return keys, matrix
