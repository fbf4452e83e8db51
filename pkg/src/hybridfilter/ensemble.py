"""Ensemble storage helpers: mean/perturbation split, inflation and effective sample size.

Ensembles are ``(n, N)`` arrays, one column per member.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEIGHT_TOL = 1e-9


class InvalidEnsembleError(ValueError):
    pass


class InvalidParameterError(ValueError):
    pass


@dataclass(frozen=True)
class Decomposition:
    """Ensemble mean and scaled perturbations ``A = (X - mean) / sqrt(N - 1)``."""

    mean: np.ndarray
    A: np.ndarray

    @property
    def size(self) -> int:
        return self.A.shape[1]

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def covariance(self) -> np.ndarray:
        return self.A @ self.A.T


def as_ensemble(members) -> np.ndarray:
    X = np.asarray(members, dtype=float)
    if X.ndim != 2:
        raise InvalidEnsembleError(f"ensemble must be 2-d (n, N), got shape {X.shape}")
    if X.shape[1] < 2:
        raise InvalidEnsembleError(f"ensemble needs N >= 2 members, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidEnsembleError("ensemble contains non-finite entries")
    return X


def decompose(members) -> Decomposition:
    X = as_ensemble(members)
    N = X.shape[1]
    mean = X.mean(axis=1)
    A = (X - mean[:, None]) / np.sqrt(N - 1)
    return Decomposition(mean, A)


def reconstitute(dec: Decomposition) -> np.ndarray:
    mean = np.asarray(dec.mean, dtype=float)
    A = np.asarray(dec.A, dtype=float)
    if A.ndim != 2 or mean.shape != (A.shape[0],):
        raise InvalidEnsembleError(
            f"mean of shape {mean.shape} does not match perturbations of shape {A.shape}"
        )
    N = A.shape[1]
    return mean[:, None] + np.sqrt(N - 1) * A


def inflate(dec: Decomposition, r: float) -> Decomposition:
    """Scale the perturbations by ``sqrt(1 + r)`` so the covariance grows by ``1 + r``."""
    if not r >= 0:
        raise InvalidParameterError(f"inflation factor must be >= 0, got {r}")
    if r == 0:
        return dec
    return Decomposition(dec.mean, np.sqrt(1.0 + r) * dec.A)


def normalize_weights(w, tol: float = WEIGHT_TOL) -> np.ndarray:
    """Validate a weight vector and renormalize it.

    Raises if any weight is negative or the sum is off from one by more than `tol`.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidParameterError("weights must be a non-empty 1-d sequence")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidParameterError("weights must be finite and nonnegative")
    total = w.sum()
    if abs(total - 1.0) > tol:
        raise InvalidParameterError(f"weights sum to {total}, not 1")
    return w / total


def effective_sample_size(w) -> float:
    w = normalize_weights(w)
    return float(1.0 / np.sum(w * w))
