"""Fourier-domain smoothing of innovations on a periodic observation grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hybridfilter.ensemble import InvalidParameterError


def blur_spectrum(k, ell: float, beta: float):
    """Attenuation ``1 / (1 + (ell k)^2)^beta`` of wavenumber `k`."""
    k = np.asarray(k, dtype=float)
    out = 1.0 / (1.0 + (ell * k) ** 2) ** beta
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BlurOperator:
    """Blur on an ``m``-point periodic grid; wavenumbers count cycles per domain."""

    ell: float = 1.0 / 20.0
    beta: float = 2.0
    m: int = 1312

    def __post_init__(self):
        if not (self.ell > 0 and self.beta > 0):
            raise InvalidParameterError("blur needs ell > 0 and beta > 0")
        if self.m < 2:
            raise InvalidParameterError(f"blur grid needs m >= 2 points, got {self.m}")

    def spectrum(self) -> np.ndarray:
        return blur_spectrum(np.arange(self.m // 2 + 1), self.ell, self.beta)

    def matrix(self) -> np.ndarray:
        """Dense ``m x m`` matrix of the operator, built from an explicit DFT."""
        m = self.m
        k = np.fft.fftfreq(m, d=1.0 / m)
        F = np.exp(-2j * np.pi * np.outer(k, np.arange(m)) / m)
        s = blur_spectrum(np.abs(k), self.ell, self.beta)
        S = (F.conj().T * s) @ F / m
        return S.real


def apply_blur(d, op: BlurOperator) -> np.ndarray:
    """Blur `d` along its first axis (a single innovation vector or one column per member)."""
    d = np.asarray(d, dtype=float)
    if d.shape[0] != op.m:
        raise InvalidParameterError(f"innovation length {d.shape[0]} does not match blur grid {op.m}")
    coeffs = np.fft.rfft(d, axis=0)
    s = op.spectrum()
    coeffs *= s.reshape((-1,) + (1,) * (d.ndim - 1))
    return np.fft.irfft(coeffs, n=op.m, axis=0)
