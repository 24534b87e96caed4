"""Exceptions and small input checks shared across modules."""

from __future__ import annotations

import numpy as np


class InputError(ValueError):
    """Invalid user input: wrong shapes, non-finite values, broken invariants."""


class ResourceError(RuntimeError):
    """A computation would exceed the configured work or memory budget."""


def as_finite_vector(x, name: str, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InputError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def as_psd_matrix(sigma, name: str = "sigma", tol: float = 1e-10) -> np.ndarray:
    """Symmetric check plus a relative eigenvalue floor of ``-tol``."""
    mat = np.atleast_2d(np.asarray(sigma, dtype=float))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InputError(f"{name} must be square, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InputError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > tol * scale:
        raise InputError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if eig[0] < -tol * scale:
        raise InputError(f"{name} is not positive semidefinite (min eigenvalue {eig[0]:.3g})")
    return 0.5 * (mat + mat.T)
