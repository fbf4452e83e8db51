"""
Bayesian optimization of a noisy function
=========================================

The tuner explores a 2-d box with a Sobol design, then fits a Matérn-5/2
Gaussian process to the averaged scores and proposes batches of four points by
Monte-Carlo noisy expected improvement. The test function has three wells of
different depths; only the narrowest is the global minimum.
"""
import numpy as np

from hybridfilter.benchmarks import NoisyThreeWell, three_well, three_well_minimum
from hybridfilter.tuner import SearchSpace, sobol_points, tune

xstar, fstar = three_well_minimum()
print(f"global minimum {fstar:.4f} at {np.round(xstar, 3)}")

space = SearchSpace(("x", "y"), (0.0, 0.0), (1.0, 1.0))

# Forty arms: sixteen quasirandom, then six GP-guided batches of four.
# Each arm's score is the mean of four noisy evaluations.
result = tune(NoisyThreeWell(noise=0.05, seed=0), space, budget=40, q=4, rng=0)
for i, rec in enumerate(result.records):
    tag = "sobol" if i < 16 else f"batch {(i - 16) // 4 + 1}"
    print(f"{i:3d} {tag:<8s} x={rec.params[0]:.3f} y={rec.params[1]:.3f}  mean {rec.mean:.4f} +/- {rec.stderr:.4f}")

best = result.best
value = three_well(space.from_unit(best.params))
print(f"\nbest arm {result.best_params()} has true value {value:.4f} "
      f"({abs(value - fstar) / abs(fstar):.1%} from the optimum)")

# For comparison, the best of the same number of Sobol points alone.
pts = sobol_points(40, 2)
print(f"best of 40 Sobol points: {min(three_well(p) for p in pts):.4f}")
