"""SIR-ESRF hybrid: the likelihood is split as ``L^alpha * L^(1 - alpha)``.

The particle filter takes the first factor, with ``alpha`` chosen so that the
weights keep a target effective sample size; the square-root filter takes the
rest, and a random mean-preserving rotation breaks up the duplicated members.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from hybridfilter.blur import BlurOperator
from hybridfilter.ensemble import (
    InvalidParameterError,
    decompose,
    effective_sample_size,
    inflate,
    reconstitute,
)
from hybridfilter.esrf import EsrfParams, RotationFactory, esrf_update, rotate
from hybridfilter.particle import (
    ScalarObservations,
    gaussian_log_likelihood,
    systematic_resample,
    tempered_weights,
)

LOG10_ALPHA_BRACKET = (-8.0, 0.0)


@dataclass(frozen=True)
class HybridParams:
    ess_target: float
    ess_tolerance: float = 1.0
    esrf: EsrfParams = field(default_factory=EsrfParams)
    blur: BlurOperator | None = None
    fixed_alpha: float | None = None

    def __post_init__(self):
        if not self.ess_target > 1:
            raise InvalidParameterError(f"ESS target must exceed 1, got {self.ess_target}")
        if not self.ess_tolerance > 0:
            raise InvalidParameterError("ESS tolerance must be positive")
        if self.fixed_alpha is not None and not 0.0 <= self.fixed_alpha <= 1.0:
            raise InvalidParameterError(f"fixed alpha must lie in [0, 1], got {self.fixed_alpha}")


@dataclass
class HybridDiagnostics:
    alpha: float
    ess: float
    bracketed: bool = True
    timings: dict = field(default_factory=dict)


def _ess_at(log_lik, alpha):
    return effective_sample_size(tempered_weights(log_lik, alpha))


def solve_alpha(log_lik, ess_target: float, tol: float = 1.0, full_output: bool = False):
    """Splitting factor whose tempered weights have an ESS within `tol` of `ess_target`.

    Bisects on ``log10(alpha)`` over ``[-8, 0]``. When even ``alpha = 1e-8`` collapses
    the weights below the target there is no bracket: the lower edge is returned and a
    warning is issued. With ``full_output=True`` returns ``(alpha, ess, bracketed)``.
    """
    log_lik = np.asarray(log_lik, dtype=float)
    N = log_lik.size
    if not 1 < ess_target <= N:
        raise InvalidParameterError(f"ESS target must lie in (1, {N}], got {ess_target}")

    def result(alpha, ess, ok):
        return (alpha, ess, ok) if full_output else alpha

    ess_hi = _ess_at(log_lik, 1.0)
    if ess_hi >= ess_target - tol:
        return result(1.0, ess_hi, True)
    lo, hi = LOG10_ALPHA_BRACKET
    ess_lo = _ess_at(log_lik, 10.0 ** lo)
    if ess_lo < ess_target - tol:
        warnings.warn(
            f"no splitting factor in [1e{lo:g}, 1] reaches ESS {ess_target}; using alpha = 1e{lo:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        return result(10.0 ** lo, ess_lo, False)
    if abs(ess_lo - ess_target) <= tol:
        return result(10.0 ** lo, ess_lo, True)
    best = (10.0 ** lo, ess_lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        alpha = 10.0 ** mid
        ess = _ess_at(log_lik, alpha)
        if abs(ess - ess_target) < abs(best[1] - ess_target):
            best = (alpha, ess)
        if abs(ess - ess_target) <= tol:
            return result(alpha, ess, True)
        if ess > ess_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    warnings.warn(
        f"bisection stalled at ESS {best[1]:.3f} (target {ess_target}); ESS may not be monotone in alpha",
        RuntimeWarning,
        stacklevel=2,
    )
    return result(best[0], best[1], False)


def hybrid_assimilate(
    members,
    obs: ScalarObservations,
    params: HybridParams,
    resample_rng,
    rotation: RotationFactory,
):
    """One SIR-ESRF analysis.

    Returns the analysis ensemble and a :class:`HybridDiagnostics`. Blurring, when
    configured, only enters the particle weights; the square-root stage always sees
    the true error variance divided by ``1 - alpha``.
    """
    timings = {}
    t0 = time.perf_counter()
    X = np.asarray(members, dtype=float)
    dec = inflate(decompose(X), params.esrf.inflation)
    X_inflated = X if params.esrf.inflation == 0 else reconstitute(dec)

    log_lik = gaussian_log_likelihood(X_inflated, obs, params.blur)
    if params.fixed_alpha is not None:
        alpha, bracketed = float(params.fixed_alpha), True
    else:
        alpha, _, bracketed = solve_alpha(log_lik, params.ess_target, params.ess_tolerance, full_output=True)
    w = tempered_weights(log_lik, alpha)
    ess = effective_sample_size(w)
    u = resample_rng.random()
    if alpha > 0.0:
        idx = systematic_resample(w, u)
        dec = decompose(X_inflated[:, idx])
    t1 = time.perf_counter()
    timings["particle"] = t1 - t0

    if alpha < 1.0:
        dec = esrf_update(dec, obs.scaled(1.0 / (1.0 - alpha)), params.esrf.localization)
    t2 = time.perf_counter()
    timings["esrf"] = t2 - t1

    dec = rotate(dec, rotation)
    timings["rotation"] = time.perf_counter() - t2
    return reconstitute(dec), HybridDiagnostics(alpha, ess, bracketed, timings)
