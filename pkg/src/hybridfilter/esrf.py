"""Serial ensemble square-root filter with Gaussian localization, and mean-preserving
random rotations of the perturbation matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hybridfilter.ensemble import (
    Decomposition,
    InvalidParameterError,
    decompose,
    inflate,
    reconstitute,
)
from hybridfilter.particle import ScalarObservations


@dataclass(frozen=True)
class EsrfParams:
    """Inflation ``r`` (covariance factor ``1 + r``) and localization radius in grid points.

    ``localization=None`` disables localization.
    """

    inflation: float = 0.0
    localization: float | None = None

    def __post_init__(self):
        if not self.inflation >= 0:
            raise InvalidParameterError(f"inflation must be >= 0, got {self.inflation}")
        if self.localization is not None and not self.localization > 0:
            raise InvalidParameterError(f"localization radius must be > 0, got {self.localization}")


def periodic_distance(i, j, n: int):
    d = np.abs(np.asarray(i) - j) % n
    return np.minimum(d, n - d)


def localization_taper(obs_index: int, L: float | None, n: int) -> np.ndarray:
    """Gaussian taper ``exp(-(d / L)^2 / 2)`` with periodic grid distance ``d``."""
    if L is None or np.isinf(L):
        return np.ones(n)
    if not L > 0:
        raise InvalidParameterError(f"localization radius must be > 0, got {L}")
    d = periodic_distance(np.arange(n), obs_index, n)
    return np.exp(-0.5 * (d / L) ** 2)


def _scalar_update_inplace(mean, A, y, j, gamma2, rho):
    v = A[j].copy()
    sigma2 = v @ v
    if sigma2 == 0.0:
        return
    total = sigma2 + gamma2
    Av = A @ v
    if rho is not None:
        Av *= rho
    mean += ((y - mean[j]) / total) * Av
    b = 1.0 / (total + np.sqrt(gamma2 * total))
    A -= np.outer(b * Av, v)


def esrf_scalar_update(
    dec: Decomposition, y: float, obs_index: int, gamma2: float, rho=None
) -> Decomposition:
    """Assimilate one direct observation of state component `obs_index`.

    `rho` is the localization taper for this observation (``None`` means no tapering).
    """
    if not gamma2 > 0:
        raise InvalidParameterError(f"observation error variance must be > 0, got {gamma2}")
    mean = np.array(dec.mean, dtype=float)
    A = np.array(dec.A, dtype=float)
    _scalar_update_inplace(mean, A, y, obs_index, gamma2, None if rho is None else np.asarray(rho))
    return Decomposition(mean, A)


def esrf_update(dec: Decomposition, obs: ScalarObservations, localization: float | None) -> Decomposition:
    """Serial updates over `obs` in ascending grid order; no inflation, no rotation."""
    mean = np.array(dec.mean, dtype=float)
    A = np.array(dec.A, dtype=float)
    n = mean.size
    if len(obs) and obs.indices[-1] >= n:
        raise InvalidParameterError(f"observation index {obs.indices[-1]} out of range for n = {n}")
    profile = None
    if localization is not None and not np.isinf(localization):
        profile = localization_taper(0, localization, n)
    for y, j, g2 in zip(obs.values, obs.indices, obs.variances()):
        rho = None if profile is None else np.roll(profile, j)
        _scalar_update_inplace(mean, A, y, j, g2, rho)
    return Decomposition(mean, A)


def esrf_assimilate(
    members, obs: ScalarObservations, params: EsrfParams, apply_inflation: bool = True
) -> np.ndarray:
    dec = decompose(members)
    if apply_inflation:
        dec = inflate(dec, params.inflation)
    return reconstitute(esrf_update(dec, obs, params.localization))


def sample_haar_orthogonal(m: int, rng) -> np.ndarray:
    """Haar-distributed ``m x m`` orthogonal matrix (QR of a Gaussian matrix, sign-fixed)."""
    if m < 1:
        raise InvalidParameterError(f"matrix size must be >= 1, got {m}")
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Q * np.sign(np.diag(R))


def householder_ones_basis(N: int) -> np.ndarray:
    """Symmetric orthogonal matrix whose first column is ``1 / sqrt(N)``."""
    e1 = np.zeros(N)
    e1[0] = 1.0
    w = e1 - np.full(N, 1.0 / np.sqrt(N))
    ww = w @ w
    if ww == 0.0:
        return np.eye(N)
    return np.eye(N) - (2.0 / ww) * np.outer(w, w)


class RotationFactory:
    """Draws random orthogonal ``Q = U blockdiag(1, P) U^T`` with ``Q 1 = 1``.

    `U` is fixed per ensemble size; `P` is drawn fresh from `rng` on every call.
    """

    def __init__(self, N: int, rng):
        if N < 2:
            raise InvalidParameterError(f"rotation needs N >= 2, got {N}")
        self.N = N
        self.rng = rng
        self.U = householder_ones_basis(N)

    def sample_delta(self, P=None) -> np.ndarray:
        """``Q - I``, formed as ``U2 (P - I) U2^T`` so that ``P = I`` gives exactly zero."""
        if P is None:
            P = sample_haar_orthogonal(self.N - 1, self.rng)
        U2 = self.U[:, 1:]
        return U2 @ (np.asarray(P, dtype=float) - np.eye(self.N - 1)) @ U2.T

    def sample(self, P=None) -> np.ndarray:
        return np.eye(self.N) + self.sample_delta(P)


def mean_preserving_rotation(A, factory: RotationFactory, P=None) -> np.ndarray:
    """``A Q`` for a freshly drawn ``Q`` (or the one built from a given `P`)."""
    A = np.asarray(A, dtype=float)
    if A.shape[1] != factory.N:
        raise InvalidParameterError(f"perturbations have {A.shape[1]} members, factory expects {factory.N}")
    return A + A @ factory.sample_delta(P)


def rotate(dec: Decomposition, factory: RotationFactory) -> Decomposition:
    return Decomposition(dec.mean, mean_preserving_rotation(dec.A, factory))


def esrf_cycle(members, obs: ScalarObservations, params: EsrfParams, rotation: RotationFactory) -> np.ndarray:
    """Inflate, assimilate serially, rotate, reconstitute: one plain ESRF analysis."""
    dec = inflate(decompose(members), params.inflation)
    dec = esrf_update(dec, obs, params.localization)
    return reconstitute(rotate(dec, rotation))
