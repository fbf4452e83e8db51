"""Forward models: the Hénon map and a two-scale Lorenz-'96 system.

The Lorenz-'96 state is a single periodic field of ``n = 41 J`` points. Its
large scales are the 41 lowest Fourier modes (wavenumbers ``|k| <= 20``),
sampled at every ``J``-th grid point; the large-scale advection acts on those
samples and is interpolated back to the fine grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hybridfilter.ensemble import InvalidParameterError

N_COARSE = 41
K_MAX = 20
DEFAULT_DT = 0.005
BLOWUP_THRESHOLD = 1e6


class ModelBlowUpError(RuntimeError):
    def __init__(self, time: float, message: str = ""):
        self.time = time
        super().__init__(message or f"model state blew up at t = {time:.6g}")


def henon_step(u0, v0):
    """One iteration of the Hénon map with a = 1.4, b = 0.3."""
    return 1.0 - 1.4 * u0 ** 2 + v0, 0.3 * u0


@dataclass(frozen=True)
class L96Config:
    h: float = 0.38
    F: float = 8.0
    J: int = 128

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise InvalidParameterError(f"J must be a positive integer, got {self.J}")

    @property
    def n(self) -> int:
        return N_COARSE * self.J


class SpectralProjector:
    """Large-scale projector ``T`` (fine -> 41 points) and its interpolant ``J T^T``.

    Both maps are built once from truncated real FFTs and then applied as dense
    matrices, which is faster than transforming every call for ensemble-sized inputs.
    """

    def __init__(self, J: int):
        self.J = int(J)
        self.n = N_COARSE * self.J
        self._T = self._fft_forward(np.eye(self.n))
        self._back = self.J * self._T.T.copy()

    def _fft_forward(self, x):
        coeffs = np.fft.rfft(x, axis=0)[: K_MAX + 1]
        return np.fft.irfft(coeffs, n=N_COARSE, axis=0) * (N_COARSE / self.n)

    def forward(self, x) -> np.ndarray:
        return self._T @ np.asarray(x, dtype=float)

    def back(self, X) -> np.ndarray:
        return self._back @ np.asarray(X, dtype=float)

    def matrix(self) -> np.ndarray:
        """The dense ``41 x n`` matrix of ``T``."""
        return self._T.copy()

    def __repr__(self):
        return f"SpectralProjector(J={self.J})"


def build_projector(J: int) -> SpectralProjector:
    if int(J) != J or J < 1:
        raise InvalidParameterError(f"J must be a positive integer, got {J}")
    return SpectralProjector(int(J))


def _small_scale_advection(x):
    # -x[i+1] * (x[i+2] - x[i-1])
    return -np.roll(x, -1, axis=0) * (np.roll(x, -2, axis=0) - np.roll(x, 1, axis=0))


def _large_scale_advection(X):
    # -X[k-1] * (X[k-2] - X[k+1])
    return -np.roll(X, 1, axis=0) * (np.roll(X, 2, axis=0) - np.roll(X, -1, axis=0))


def l96_tendency(x, cfg: L96Config, proj: SpectralProjector) -> np.ndarray:
    """Time derivative of the two-scale model.

    `x` is a state of length ``n`` or an ``(n, N)`` ensemble (one member per column).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != cfg.n or proj.n != cfg.n:
        raise InvalidParameterError(
            f"state length {x.shape[0]} does not match model dimension {cfg.n}"
        )
    large = proj.back(_large_scale_advection(proj.forward(x)))
    return cfg.h * _small_scale_advection(x) + large - x + cfg.F


def rk4_integrate(
    x0,
    duration: float,
    dt: float,
    cfg: L96Config,
    proj: SpectralProjector,
    tendency=l96_tendency,
    blowup_threshold: float = BLOWUP_THRESHOLD,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta; the last step is shortened to land on `duration`."""
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if duration < 0:
        raise InvalidParameterError(f"duration must be nonnegative, got {duration}")
    x = np.array(x0, dtype=float)
    n_steps = math.ceil(duration / dt - 1e-9)
    t = 0.0
    for step in range(n_steps):
        h = min(dt, duration - t) if step == n_steps - 1 else dt
        k1 = tendency(x, cfg, proj)
        k2 = tendency(x + 0.5 * h * k1, cfg, proj)
        k3 = tendency(x + 0.5 * h * k2, cfg, proj)
        k4 = tendency(x + h * k3, cfg, proj)
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        peak = np.max(np.abs(x))
        if not np.isfinite(peak) or peak > blowup_threshold:
            raise ModelBlowUpError(t)
    return x
