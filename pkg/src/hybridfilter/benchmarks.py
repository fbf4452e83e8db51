"""Synthetic objectives with known minima for exercising the tuner."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import optimize

# (center, depth, width) of each well on the unit square
WELLS = (
    ((0.72, 0.28), 1.00, 0.10),
    ((0.25, 0.70), 0.85, 0.20),
    ((0.30, 0.20), 0.70, 0.12),
)
BASELINE = 2.0


def three_well(x) -> float:
    """Smooth 2-d function with three Gaussian wells; the deepest has value near 1."""
    x = np.asarray(x, dtype=float)
    out = BASELINE
    for center, depth, width in WELLS:
        r2 = np.sum((x - np.asarray(center)) ** 2, axis=-1)
        out = out - depth * np.exp(-0.5 * r2 / width ** 2)
    return out


@lru_cache(maxsize=None)
def three_well_minimum() -> tuple:
    """``(argmin, min)`` found by polishing from every well center."""
    best = None
    for center, _, _ in WELLS:
        res = optimize.minimize(three_well, center, bounds=[(0, 1), (0, 1)], method="L-BFGS-B", tol=1e-14)
        if best is None or res.fun < best.fun:
            best = res
    return tuple(best.x), float(best.fun)


class NoisyThreeWell:
    """Picklable noisy objective ``(params, trial) -> value`` for the tuner."""

    def __init__(self, noise: float = 0.05, seed: int = 0):
        self.noise = noise
        self.seed = seed
        self.calls = 0

    def __call__(self, params: dict, trial: int) -> float:
        x = np.array([params["x"], params["y"]])
        key = np.frombuffer(x.tobytes(), dtype=np.uint32)
        rng = np.random.default_rng([self.seed, trial, *key.tolist()])
        self.calls += 1
        return float(three_well(x) + self.noise * rng.standard_normal())
