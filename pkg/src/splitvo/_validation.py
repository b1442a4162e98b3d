"""Input checks shared by the estimator front-ends."""

from __future__ import annotations

import numpy as np

UNIT_NORM_TOL = 1e-6


def as_unit_rows(a: np.ndarray, name: str) -> np.ndarray:
    """Validate an (n, 3) array of unit vectors and return a normalized copy."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    norms = np.linalg.norm(a, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(
            f"{name} rows must be unit vectors (worst norm deviation {worst:.3g})"
        )
    return a / norms[:, None]


def check_pair_matrix(X: np.ndarray, n_cols: int, name: str) -> np.ndarray:
    """Basic 2-D float matrix check with an exact column count."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != n_cols:
        raise ValueError(f"{name} must have shape (n, {n_cols}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def split_bearing_pairs(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split (n, 6) rows [keyframe bearing | current bearing]."""
    X = check_pair_matrix(X, 6, "X")
    f = as_unit_rows(X[:, :3], "X[:, :3]")
    f_prime = as_unit_rows(X[:, 3:], "X[:, 3:]")
    return f, f_prime


def split_magnitude_rows(
    X: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split (n, 7) rows [keyframe bearing | current bearing | depth]."""
    X = check_pair_matrix(X, 7, "X")
    f = as_unit_rows(X[:, :3], "X[:, :3]")
    f_prime = as_unit_rows(X[:, 3:6], "X[:, 3:6]")
    depths = X[:, 6]
    if np.any(depths <= 0.0):
        raise ValueError("depths (column 6) must be positive")
    return f, f_prime, depths
