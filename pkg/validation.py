"""Coercion and shape checks for numeric inputs."""

from typing import Any, Optional

import numpy as np

from errors import ArgumentError


def as_matrix(value: Any, name: str, columns: Optional[int] = None, min_rows: int = 1) -> np.ndarray:
    """
    Coerce input to a 2-D float matrix.

    Args:
        value: Array-like input
        name: Argument name used in error messages
        columns: Required column count, if any
        min_rows: Minimum row count

    Returns:
        Float matrix
    """
    matrix = np.asarray(value, dtype=float)
    if matrix.ndim == 1 and columns == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2:
        raise ArgumentError(f"{name} must be a matrix, got {matrix.ndim} dimensions")
    if columns is not None and matrix.shape[1] != columns:
        raise ArgumentError(f"{name} must have {columns} columns, got {matrix.shape[1]}")
    if matrix.shape[0] < min_rows:
        raise ArgumentError(f"{name} needs at least {min_rows} rows, got {matrix.shape[0]}")
    return matrix


def as_vector(value: Any, name: str, length: Optional[int] = None) -> np.ndarray:
    """Coerce input to a 1-D float vector, optionally of a fixed length"""
    vector = np.asarray(value, dtype=float)
    if vector.ndim != 1:
        raise ArgumentError(f"{name} must be a vector, got {vector.ndim} dimensions")
    if length is not None and vector.shape[0] != length:
        raise ArgumentError(f"{name} must have length {length}, got {vector.shape[0]}")
    return vector


def as_treatments(value: Any, length: int, name: str = "t") -> np.ndarray:
    """Coerce a treatment vector and require entries in {0, 1}"""
    t = np.asarray(value)
    if t.ndim != 1 or t.shape[0] != length:
        raise ArgumentError(f"{name} must be a vector of length {length}")
    if not np.all((t == 0) | (t == 1)):
        raise ArgumentError(f"{name} must contain only 0 and 1")
    return t.astype(np.int64)


def check_same_length(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape[0] != b.shape[0]:
        raise ArgumentError(f"{what} have mismatched lengths {a.shape[0]} and {b.shape[0]}")


def check_treatment(t: int) -> int:
    if t not in (0, 1):
        raise ArgumentError(f"treatment must be 0 or 1, got {t}")
    return int(t)
