"""Small input-validation helpers used by the estimators and core ops."""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    if dim is not None and v.shape[0] != dim:
        raise DimMismatch(f"{name} has dim {v.shape[0]}, expected {dim}")
    return v


def as_matrix(x, dim: int | None = None, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array; 1-D input becomes a single row."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[np.newaxis, :]
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"{name} is empty, shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    if dim is not None and m.shape[1] != dim:
        raise DimMismatch(f"{name} has dim {m.shape[1]}, expected {dim}")
    return m


def check_unit_rows(m: np.ndarray, tol: float = 1e-5, name: str = "matrix") -> None:
    """Require every row of m to have L2 norm 1 within tol."""
    norms = np.linalg.norm(np.asarray(m, dtype=np.float64), axis=-1)
    bad = np.abs(norms - 1.0) > tol
    if np.any(bad):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"{name} rows must be unit-normalized (worst deviation {worst:.3g})")


def check_fraction(value: float, name: str) -> float:
    """Require a float in [0, 1]."""
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value


def check_positive_int(value: int, name: str) -> int:
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value}")
    return value
