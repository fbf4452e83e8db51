"""Verification scores for ensembles."""
from __future__ import annotations

import numpy as np

from hybridfilter.ensemble import Decomposition, InvalidParameterError, normalize_weights


def rmse(mean, truth) -> float:
    mean = np.asarray(mean, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if mean.shape != truth.shape:
        raise InvalidParameterError(f"shape mismatch: {mean.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((mean - truth) ** 2)))


def spread(dec: Decomposition) -> float:
    """Root of the mean ensemble variance, ``sqrt(trace(A A^T) / n)``."""
    return float(np.sqrt(np.sum(dec.A * dec.A) / dec.A.shape[0]))


def crps_ensemble(values, truth: float, weights=None) -> float:
    """CRPS of an (optionally weighted) ensemble against a scalar outcome.

    Uses ``E|X - y| - E|X - X'| / 2`` with the empirical ensemble distribution,
    evaluated in ``O(N log N)`` after sorting.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise InvalidParameterError("CRPS needs at least one member")
    if weights is None:
        return float(crps_members(v[None, :], np.atleast_1d(truth))[0])
    w = normalize_weights(weights)
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    below = np.cumsum(w) - w
    above = 1.0 - below - w
    pair_term = np.sum(w * v * (below - above))
    return float(np.sum(w * np.abs(v - truth)) - pair_term)


def crps_members(members, truth) -> np.ndarray:
    """Per-variable CRPS of an ``(n, N)`` equally weighted ensemble."""
    X = np.asarray(members, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if X.ndim != 2 or truth.shape != (X.shape[0],):
        raise InvalidParameterError("members must be (n, N) and truth length n")
    N = X.shape[1]
    abs_err = np.mean(np.abs(X - truth[:, None]), axis=1)
    S = np.sort(X, axis=1)
    rank_coef = 2.0 * np.arange(N) - N + 1.0
    # sum_{i,j} |x_i - x_j| / (2 N^2) == sum_i (2i - N + 1) x_(i) / N^2
    pair_term = S @ rank_coef / N ** 2
    return abs_err - pair_term
