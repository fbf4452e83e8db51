"""SIR stage: Gaussian log-likelihoods, tempered weights and systematic resampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hybridfilter.blur import BlurOperator, apply_blur
from hybridfilter.ensemble import (
    InvalidParameterError,
    as_ensemble,
    effective_sample_size,
    normalize_weights,
)

_SNAP = 1e-9


class DegenerateWeightsError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ScalarObservations:
    """Direct point observations of the state with uncorrelated Gaussian errors.

    `variance` is either one error variance for every observation or one per observation.
    """

    values: np.ndarray
    indices: np.ndarray
    variance: float | np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        indices = np.atleast_1d(np.asarray(self.indices, dtype=int))
        variance = np.asarray(self.variance, dtype=float)
        if values.shape != indices.shape or values.ndim != 1:
            raise InvalidParameterError("observation values and indices must be 1-d and equally long")
        if np.any(np.diff(indices) <= 0) or (indices.size and indices[0] < 0):
            raise InvalidParameterError("observation indices must be nonnegative and strictly increasing")
        if variance.ndim > 1 or (variance.ndim == 1 and variance.shape != values.shape):
            raise InvalidParameterError("variance must be a scalar or one value per observation")
        if np.any(variance <= 0):
            raise InvalidParameterError("observation error variance must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "variance", float(variance) if variance.ndim == 0 else variance)

    def __len__(self):
        return self.values.size

    def variances(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.variance, dtype=float), self.values.shape)

    def scaled(self, factor: float) -> "ScalarObservations":
        """Same observations with every error variance multiplied by `factor`."""
        return ScalarObservations(self.values, self.indices, np.asarray(self.variance) * factor)


def innovations(members, obs: ScalarObservations) -> np.ndarray:
    X = np.asarray(members, dtype=float)
    if obs.indices.size and obs.indices[-1] >= X.shape[0]:
        raise InvalidParameterError(
            f"observation index {obs.indices[-1]} out of range for state length {X.shape[0]}"
        )
    y = obs.values.reshape((-1,) + (1,) * (X.ndim - 1))
    return y - X[obs.indices]


def gaussian_log_likelihood(member, obs: ScalarObservations, blur: BlurOperator | None = None):
    """Log-likelihood up to an additive constant.

    `member` is a state vector (returns a float) or an ``(n, N)`` ensemble (returns one
    value per column). With `blur`, the innovations are smoothed before being weighed,
    which swaps the error covariance for ``variance * (S^T S)^{-1}``.
    """
    d = innovations(member, obs)
    if blur is None:
        var = obs.variances().reshape((-1,) + (1,) * (d.ndim - 1))
        out = -0.5 * np.sum(d * d / var, axis=0)
    else:
        if np.ndim(obs.variance) != 0:
            raise InvalidParameterError("blurred likelihood needs a single error variance")
        Sd = apply_blur(d, blur)
        out = -0.5 * np.sum(Sd * Sd, axis=0) / obs.variance
    return float(out) if np.ndim(out) == 0 else out


def tempered_weights(log_lik, alpha: float, prior_w=None) -> np.ndarray:
    """Normalized weights proportional to ``prior_w * exp(alpha * log_lik)``."""
    log_lik = np.asarray(log_lik, dtype=float)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    N = log_lik.size
    prior = np.full(N, 1.0 / N) if prior_w is None else normalize_weights(prior_w)
    if prior.size != N:
        raise InvalidParameterError("prior weights and log-likelihoods differ in length")
    if alpha == 0.0:
        return prior.copy()
    with np.errstate(divide="ignore"):
        logw = np.log(prior) + alpha * log_lik
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeightsError("every particle weight underflowed to zero")
    w = np.exp(logw - top)
    return w / w.sum()


def systematic_resample(w, u: float) -> np.ndarray:
    """Indices chosen by one stratified sweep at positions ``(i + u) / N``.

    Particle ``j`` fills slot ``i`` when its cumulative-weight interval contains the
    position. Returned indices are nondecreasing.
    """
    w = normalize_weights(w)
    if not 0.0 <= u < 1.0:
        raise InvalidParameterError(f"u must lie in [0, 1), got {u}")
    N = w.size
    # Slots below each cumulative boundary; snapping keeps exact boundary hits exact.
    x = N * np.cumsum(w) - u
    nearest = np.round(x)
    x = np.where(np.abs(x - nearest) < _SNAP, nearest, x)
    counts = np.clip(np.ceil(x), 0, N).astype(int)
    counts[-1] = N
    return np.repeat(np.arange(N), np.diff(counts, prepend=0))


def sir_assimilate(members, obs: ScalarObservations, alpha: float, blur, rng, prior_w=None):
    """Weight by ``L^alpha``, resample systematically.

    Returns ``(resampled ensemble, uniform weights, ESS before resampling)``.
    """
    X = as_ensemble(members)
    log_lik = gaussian_log_likelihood(X, obs, blur)
    w = tempered_weights(log_lik, alpha, prior_w)
    ess = effective_sample_size(w)
    idx = systematic_resample(w, rng.random())
    N = X.shape[1]
    return X[:, idx], np.full(N, 1.0 / N), ess
