"""Bayesian optimization of filter parameters.

Arms are first drawn from a Sobol sequence; after that a Gaussian-process
surrogate (ARD Matérn-5/2, Gamma hyperpriors, MAP fit) is fitted to the
standardized mean scores and new batches are chosen by Monte-Carlo batched noisy
expected improvement. All quantities are minimized.
"""
from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import qmc

from hybridfilter.ensemble import InvalidParameterError

log = logging.getLogger(__name__)

NU = 2.5
SQRT5 = math.sqrt(5.0)
LENGTH_PRIOR = (6.0, 3.0)  # Gamma shape, rate
SCALE_PRIOR = (2.0, 0.15)
MAX_JITTER = 1e-6
HYPER_BOUNDS = (1e-4, 1e3)


class GPFitError(RuntimeError):
    pass


# --- search space and arm records ------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if not len(self.names) == len(self.lower) == len(self.upper):
            raise InvalidParameterError("names, lower and upper must have equal length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise InvalidParameterError("every lower bound must be below its upper bound")

    @property
    def dims(self) -> int:
        return len(self.names)

    def to_unit(self, raw) -> np.ndarray:
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        return (np.asarray(raw, dtype=float) - lo) / (hi - lo)

    def from_unit(self, unit) -> np.ndarray:
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        return lo + np.asarray(unit, dtype=float) * (hi - lo)

    def as_dict(self, unit) -> dict:
        return {k: float(v) for k, v in zip(self.names, self.from_unit(unit))}

    @classmethod
    def esrf(cls, inflation=(0.0, 0.08), localization=(128.0, 320.0)) -> "SearchSpace":
        return cls(("inflation", "localization"), (inflation[0], localization[0]), (inflation[1], localization[1]))

    @classmethod
    def hybrid(cls, ess=(66.0, 400.0), inflation=(0.0, 0.15), localization=(128.0, 320.0)) -> "SearchSpace":
        return cls(
            ("inflation", "localization", "ess_target"),
            (inflation[0], localization[0], ess[0]),
            (inflation[1], localization[1], ess[1]),
        )


@dataclass
class ArmRecord:
    """Per-trial scores of one parameter setting (stored in unit-cube coordinates)."""

    params: np.ndarray
    values: list = field(default_factory=list)
    status: str = "ok"

    @property
    def n_trials(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def stderr(self) -> float:
        if len(self.values) < 2:
            return 0.0
        return float(np.std(self.values, ddof=1) / math.sqrt(len(self.values)))

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def sobol_points(count: int, dims: int) -> np.ndarray:
    """First `count` points of the unscrambled Sobol sequence, skipping the origin."""
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    if not 1 <= dims <= qmc.Sobol.MAXDIM:
        raise InvalidParameterError(f"Sobol sequence supports 1..{qmc.Sobol.MAXDIM} dimensions, got {dims}")
    engine = qmc.Sobol(dims, scramble=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pts = engine.random(count + 1)
    return pts[1:]


@dataclass(frozen=True)
class Standardization:
    mean: float
    std: float

    def forward(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean


def standardize(values, stderrs):
    """Center and scale the arm means; standard errors share the same divisor."""
    values = np.asarray(values, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    if values.size < 2:
        raise InvalidParameterError("standardization needs at least two records")
    std = float(np.std(values, ddof=1))
    if not std > 0:
        raise InvalidParameterError("all records have the same value; cannot standardize")
    tf = Standardization(float(np.mean(values)), std)
    return tf.forward(values), stderrs / std, tf


# --- kernel and marginal likelihood ---------------------------------------------------


@dataclass(frozen=True)
class GpHyperparameters:
    """ARD length scales (diagonal of ``Theta_d``, in squared-distance units) and output scale."""

    lengthscales: np.ndarray
    scale: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0) or not self.scale > 0:
            raise InvalidParameterError("GP hyperparameters must be positive")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "scale", float(self.scale))

    def as_vector(self) -> np.ndarray:
        return np.append(self.lengthscales, self.scale)

    @classmethod
    def from_vector(cls, theta) -> "GpHyperparameters":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], theta[-1])


def scaled_distance(P, Q, lengthscales) -> np.ndarray:
    """``sqrt((p - q)^T Theta_d^{-1} (p - q))`` for every pair of rows."""
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    diff = P[:, None, :] - Q[None, :, :]
    return np.sqrt(np.sum(diff * diff / lengthscales, axis=-1))


def matern52_from_distance(rho, scale: float = 1.0):
    rho = np.asarray(rho, dtype=float)
    return scale * (1.0 + SQRT5 * rho + 5.0 * rho * rho / 3.0) * np.exp(-SQRT5 * rho)


def matern_bessel(rho, nu: float = NU, scale: float = 1.0):
    """General Matérn covariance written with the modified Bessel function ``K_nu``."""
    rho = np.asarray(rho, dtype=float)
    z = np.sqrt(2.0 * nu) * rho
    with np.errstate(invalid="ignore"):
        out = scale * 2.0 ** (1.0 - nu) / special.gamma(nu) * z ** nu * special.kv(nu, z)
    return np.where(rho == 0, scale, out)


def matern52(p, q, hyp: GpHyperparameters) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.shape[-1] != hyp.lengthscales.size:
        raise InvalidParameterError("point dimensions do not match the hyperparameters")
    return float(matern52_from_distance(scaled_distance(p, q, hyp.lengthscales)[0, 0], hyp.scale))


def kernel_matrix(P, Q, hyp: GpHyperparameters) -> np.ndarray:
    return matern52_from_distance(scaled_distance(P, Q, hyp.lengthscales), hyp.scale)


def _jittered_cholesky(C):
    """Lower Cholesky factor, adding diagonal jitter up to ``MAX_JITTER`` when needed."""
    jitter = 0.0
    eye = np.eye(C.shape[0])
    while True:
        try:
            return cholesky(C + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-12 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise GPFitError("covariance matrix is not positive definite even with jitter") from None


def _gamma_log_prior(x, shape, rate):
    return (shape - 1.0) * np.log(x) - rate * x + shape * math.log(rate) - special.gammaln(shape)


def log_map_posterior(hyp: GpHyperparameters, X, s, noise_var, return_grad: bool = False):
    """Log marginal likelihood of standardized scores `s` plus the Gamma log-priors.

    `noise_var` holds the squared (standardized) standard errors. With
    ``return_grad=True`` also returns the gradient with respect to
    ``(lengthscale_1, ..., lengthscale_d, scale)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s = np.asarray(s, dtype=float)
    n, d = X.shape
    ls = hyp.lengthscales
    rho = scaled_distance(X, X, ls)
    K = matern52_from_distance(rho, hyp.scale)
    L, _ = _jittered_cholesky(K + np.diag(np.asarray(noise_var, dtype=float) * np.ones(n)))
    alpha = cho_solve((L, True), s)
    value = -0.5 * s @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi)
    value += np.sum(_gamma_log_prior(ls, *LENGTH_PRIOR)) + _gamma_log_prior(hyp.scale, *SCALE_PRIOR)
    if not return_grad:
        return float(value)

    Cinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Cinv
    # dk/drho * drho/dtheta_j with the rho factor cancelled analytically
    common = hyp.scale * (5.0 / 3.0) * (1.0 + SQRT5 * rho) * np.exp(-SQRT5 * rho)
    grad = np.empty(d + 1)
    for j in range(d):
        diff2 = (X[:, None, j] - X[None, :, j]) ** 2
        dK = common * diff2 / (2.0 * ls[j] ** 2)
        grad[j] = 0.5 * np.sum(W * dK)
    grad[d] = 0.5 * np.sum(W * K) / hyp.scale
    shape_l, rate_l = LENGTH_PRIOR
    shape_s, rate_s = SCALE_PRIOR
    grad[:d] += (shape_l - 1.0) / ls - rate_l
    grad[d] += (shape_s - 1.0) / hyp.scale - rate_s
    return float(value), grad


def fit_gp_map(X, s, noise_var, restarts: int = 10, rng=None) -> GpHyperparameters:
    """MAP hyperparameters by bounded L-BFGS-B in log space from prior-sampled starts."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(rng)
    d = X.shape[1]
    lo, hi = np.log(HYPER_BOUNDS[0]), np.log(HYPER_BOUNDS[1])

    def negative(log_theta):
        theta = np.exp(log_theta)
        try:
            val, grad = log_map_posterior(GpHyperparameters.from_vector(theta), X, s, noise_var, return_grad=True)
        except GPFitError:
            return 1e25, np.zeros_like(log_theta)
        return -val, -grad * theta

    best, best_val, errors = None, -np.inf, []
    for _ in range(max(1, restarts)):
        start = np.append(
            rng.gamma(LENGTH_PRIOR[0], 1.0 / LENGTH_PRIOR[1], size=d),
            rng.gamma(SCALE_PRIOR[0], 1.0 / SCALE_PRIOR[1]),
        )
        x0 = np.clip(np.log(start), lo, hi)
        f0, _ = negative(x0)
        if -f0 > best_val and f0 < 1e25:
            best, best_val = x0, -f0
        try:
            res = optimize.minimize(negative, x0, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * (d + 1))
        except (ValueError, FloatingPointError) as exc:
            errors.append(str(exc))
            continue
        if res.fun < 1e25 and -res.fun > best_val:
            best, best_val = res.x, -res.fun
    if best is None:
        raise GPFitError(f"every restart failed: {errors}")
    return GpHyperparameters.from_vector(np.exp(best))


class GaussianProcess:
    """Zero-mean GP posterior over the latent objective given noisy observations."""

    def __init__(self, X, s, noise_var, hyp: GpHyperparameters):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.s = np.asarray(s, dtype=float)
        self.noise_var = np.asarray(noise_var, dtype=float) * np.ones(len(self.s))
        self.hyp = hyp
        K = kernel_matrix(self.X, self.X, hyp)
        self._L, self.jitter = _jittered_cholesky(K + np.diag(self.noise_var))
        self._alpha = cho_solve((self._L, True), self.s)

    def predict(self, Xs, full_cov: bool = False):
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = kernel_matrix(self.X, Xs, self.hyp)
        mean = Ks.T @ self._alpha
        V = solve_triangular(self._L, Ks, lower=True)
        if full_cov:
            return mean, kernel_matrix(Xs, Xs, self.hyp) - V.T @ V
        return mean, np.maximum(self.hyp.scale - np.sum(V * V, axis=0), 0.0)


# --- acquisition -----------------------------------------------------------------------


def _psd_factor(S):
    S = 0.5 * (S + S.T)
    scale = max(float(np.mean(np.diag(S))), 1e-12)
    jitter = 1e-10 * scale
    for _ in range(8):
        try:
            return np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    w, V = np.linalg.eigh(S)
    return V * np.sqrt(np.clip(w, 0.0, None))


def normal_base_samples(dims: int, draws: int, rng) -> np.ndarray:
    """Scrambled-Sobol standard normal draws of shape ``(dims, draws)``."""
    engine = qmc.Sobol(dims, scramble=True, seed=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = engine.random(draws)
    return stats.norm.ppf(np.clip(u, 1e-12, 1 - 1e-12)).T


def noisy_expected_improvement(gp: GaussianProcess, candidates, base) -> float:
    """Monte-Carlo batched noisy EI of `candidates` (q x d) for minimization.

    Joint posterior draws over the observed arms and the candidates; each draw's
    improvement is the best observed latent value minus the best candidate value.
    `base` holds standard normal draws with one row per joint point.
    """
    candidates = np.atleast_2d(candidates)
    n = gp.X.shape[0]
    pts = np.vstack([gp.X, candidates])
    mean, cov = gp.predict(pts, full_cov=True)
    draws = mean[:, None] + _psd_factor(cov) @ base[: pts.shape[0]]
    improvement = draws[:n].min(axis=0) - draws[n:].min(axis=0)
    return float(np.mean(np.maximum(improvement, 0.0)))


def expected_improvement(mean, sd, best):
    """Closed-form EI below `best` for a Gaussian predictive distribution."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    z = (best - mean) / np.where(sd > 0, sd, 1.0)
    ei = (best - mean) * stats.norm.cdf(z) + sd * stats.norm.pdf(z)
    return np.where(sd > 0, ei, np.maximum(best - mean, 0.0))


def _pattern_search(f, x0, step=0.125, min_step=1e-3, max_evals=400):
    """Maximize `f` over the unit cube by compass search."""
    x = np.array(x0, dtype=float)
    fx = f(x)
    evals = 1
    while step >= min_step and evals < max_evals:
        improved = False
        for j in range(x.size):
            for sign in (1.0, -1.0):
                y = x.copy()
                y[j] = np.clip(y[j] + sign * step, 0.0, 1.0)
                if y[j] == x[j]:
                    continue
                fy = f(y)
                evals += 1
                if fy > fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return x, fx


def suggest_batch(
    gp: GaussianProcess,
    space: SearchSpace,
    q: int = 1,
    mc_draws: int = 128,
    rng=None,
    n_starts: int = 64,
    n_refine: int = 4,
):
    """Choose `q` new arms by greedy maximization of batched noisy EI.

    Each batch member is optimized in turn with the earlier members held fixed:
    the acquisition is scored at `n_starts` scrambled Sobol points and the best
    `n_refine` of them are refined by compass search. Returns ``(unit, raw)`` arrays.
    """
    if not 1 <= q <= 32:
        raise InvalidParameterError(f"batch size must lie in 1..32, got {q}")
    rng = np.random.default_rng(rng)
    d = space.dims
    base = normal_base_samples(gp.X.shape[0] + q, mc_draws, rng)
    chosen = np.empty((0, d))
    for _ in range(q):
        def acq(x):
            return noisy_expected_improvement(gp, np.vstack([chosen, x]), base)

        starts = qmc.Sobol(d, scramble=True, seed=rng).random(n_starts) if d else np.empty((1, 0))
        scores = np.array([acq(x) for x in starts])
        order = np.argsort(-scores, kind="stable")[:n_refine]
        best_x, best_f = starts[order[0]], scores[order[0]]
        for i in order:
            x, fx = _pattern_search(acq, starts[i])
            if fx > best_f:
                best_x, best_f = x, fx
        chosen = np.vstack([chosen, best_x])
    return chosen, space.from_unit(chosen)


# --- tuning loop -----------------------------------------------------------------------


@dataclass
class TuneResult:
    space: SearchSpace
    records: list

    @property
    def best(self) -> ArmRecord:
        ok = [r for r in self.records if r.ok]
        if not ok:
            raise RuntimeError("no arm evaluated successfully")
        return min(ok, key=lambda r: r.mean)

    def best_params(self) -> dict:
        return self.space.as_dict(self.best.params)


def _evaluate_arm(objective, raw: dict, trials) -> ArmRecord:
    values = []
    for trial in trials:
        try:
            value = float(objective(raw, trial))
        except Exception as exc:  # noqa: BLE001 - any objective failure penalizes the arm
            log.warning("arm %s failed on trial %d: %s", raw, trial, exc)
            return ArmRecord(np.empty(0), values, status="failed")
        if not math.isfinite(value):
            return ArmRecord(np.empty(0), values, status="failed")
        values.append(value)
    return ArmRecord(np.empty(0), values)


def training_data(records):
    """Unit-cube inputs, standardized values and noise variances; failed arms penalized.

    A failed arm gets the worst successful mean plus three standard deviations of the
    successful means, so the surrogate learns to stay away from it.
    """
    ok = [r for r in records if r.ok]
    means = np.array([r.mean for r in ok])
    ses = np.array([r.stderr for r in ok])
    s_ok, se_ok, tf = standardize(means, ses)
    X, s, se = [], [], []
    penalty = float(np.max(s_ok)) + 3.0
    k = 0
    for r in records:
        X.append(r.params)
        if r.ok:
            s.append(s_ok[k])
            se.append(se_ok[k])
            k += 1
        else:
            s.append(penalty)
            se.append(float(np.median(se_ok)))
    return np.array(X), np.array(s), np.array(se) ** 2, tf


def _ledger_line(space, record: ArmRecord) -> str:
    return json.dumps(
        dict(
            unit=[float(v) for v in record.params],
            raw=space.as_dict(record.params),
            values=record.values,
            mean=record.mean if record.values else None,
            stderr=record.stderr,
            status=record.status,
        ),
        sort_keys=True,
    )


def read_ledger(path) -> list:
    records = []
    if path is None or not os.path.exists(path):
        return records
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entry = json.loads(line)
                records.append(ArmRecord(np.asarray(entry["unit"], dtype=float), list(entry["values"]), entry["status"]))
    return records


def tune(
    objective,
    space: SearchSpace,
    budget: int,
    q: int = 4,
    rng=None,
    n_sobol: int = 16,
    trials_per_arm: int = 4,
    restarts: int = 10,
    mc_draws: int = 128,
    ledger_path=None,
    jobs: int = 1,
) -> TuneResult:
    """Quasirandom exploration followed by GP-guided batches until `budget` arms are scored.

    `objective(params, trial)` returns the score of one trial (e.g. mean analysis CRPS)
    for raw parameters given as a name -> value dict. Records already present in
    `ledger_path` are reused, so an interrupted run resumes where it stopped.
    """
    if budget < n_sobol:
        raise InvalidParameterError(f"budget {budget} is smaller than the Sobol phase ({n_sobol})")
    rng = np.random.default_rng(rng)
    records = read_ledger(ledger_path)
    trials = range(trials_per_arm)

    def evaluate(units):
        args = [(objective, space.as_dict(u), trials) for u in units]
        if jobs and jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_evaluate_arm, *zip(*args)))
        else:
            results = [_evaluate_arm(*a) for a in args]
        for u, rec in zip(units, results):
            rec.params = np.asarray(u, dtype=float)
            records.append(rec)
            if ledger_path is not None:
                with open(ledger_path, "a") as fh:
                    fh.write(_ledger_line(space, rec) + "\n")

    sobol = sobol_points(n_sobol, space.dims)
    if len(records) < n_sobol:
        evaluate(sobol[len(records):])

    # Seeding each iteration by the record count keeps a resumed run on the same path.
    root = int(rng.integers(2**32))
    while len(records) < budget:
        iter_rng = np.random.default_rng([root, len(records)])
        batch = min(q, budget - len(records))
        try:
            X, s, noise, _ = training_data(records)
            hyp = fit_gp_map(X, s, noise, restarts, iter_rng)
            gp = GaussianProcess(X, s, noise, hyp)
            units, _ = suggest_batch(gp, space, batch, mc_draws, iter_rng)
        except (InvalidParameterError, GPFitError) as exc:
            log.warning("surrogate unavailable (%s); falling back to random arms", exc)
            units = iter_rng.random((batch, space.dims))
        evaluate(units)
    return TuneResult(space, records)
