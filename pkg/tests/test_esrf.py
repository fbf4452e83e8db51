import math

import numpy as np
import pytest

from hybridfilter.ensemble import Decomposition, InvalidParameterError, decompose, inflate, reconstitute
from hybridfilter.esrf import (
    EsrfParams,
    RotationFactory,
    esrf_assimilate,
    esrf_scalar_update,
    esrf_update,
    householder_ones_basis,
    localization_taper,
    mean_preserving_rotation,
    sample_haar_orthogonal,
)
from hybridfilter.particle import ScalarObservations


def kalman_posterior(mean, P, idx, y, variances):
    """Dense batch Kalman update for direct observations of `idx`."""
    H = np.zeros((len(idx), mean.size))
    H[np.arange(len(idx)), idx] = 1.0
    S = H @ P @ H.T + np.diag(variances)
    K = P @ H.T @ np.linalg.inv(S)
    return mean + K @ (y - H @ mean), P - K @ H @ P


def test_taper_examples():
    rho = localization_taper(3, 2.0, 10)
    assert rho[3] == 1.0
    assert rho[5] == pytest.approx(math.exp(-0.5))
    rho = localization_taper(0, 1.7, 8)
    assert rho[5] == pytest.approx(math.exp(-0.5 * (3 / 1.7) ** 2))
    np.testing.assert_array_equal(localization_taper(2, None, 5), np.ones(5))


def test_scalar_update_zero_variance():
    dec = Decomposition(np.array([1.0, 2.0]), np.array([[0.0, 0.0], [1.0, -1.0]]))
    out = esrf_scalar_update(dec, 5.0, 0, 1.0)
    np.testing.assert_array_equal(out.mean, dec.mean)
    np.testing.assert_array_equal(out.A, dec.A)


def test_scalar_update_hand_example():
    dec = Decomposition(np.array([0.0]), np.array([[-1.0, 1.0]]))
    out = esrf_scalar_update(dec, 2.0, 0, 1.0, np.ones(1))
    b = 1 / (3 + math.sqrt(3))
    np.testing.assert_allclose(out.mean, [4 / 3])
    np.testing.assert_allclose(out.A, np.array([[-1.0, 1.0]]) * (1 - 2 * b))
    assert (out.A @ out.A.T)[0, 0] == pytest.approx(2 / 3)


def test_scalar_update_rejects_bad_variance():
    with pytest.raises(InvalidParameterError):
        esrf_scalar_update(Decomposition(np.zeros(1), np.array([[1.0, -1.0]])), 0.0, 0, 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_scalar_update_is_exact_kalman(seed):
    rng = np.random.default_rng(seed)
    dec = decompose(rng.standard_normal((5, 9)))
    j, y, g2 = int(rng.integers(5)), rng.normal(), rng.uniform(0.1, 2)
    out = esrf_scalar_update(dec, y, j, g2)
    mean, P = kalman_posterior(dec.mean, dec.covariance(), [j], np.array([y]), [g2])
    np.testing.assert_allclose(out.mean, mean, atol=1e-10)
    np.testing.assert_allclose(out.covariance(), P, atol=1e-10)


def test_localized_increment_vanishes_where_taper_is_zero(rng):
    dec = decompose(rng.standard_normal((4, 6)))
    rho = np.array([1.0, 0.5, 0.0, 1.0])
    out = esrf_scalar_update(dec, 3.0, 0, 0.5, rho)
    assert out.mean[2] == dec.mean[2]
    np.testing.assert_array_equal(out.A[2], dec.A[2])


def test_assimilate_no_observations_is_inflation(rng):
    X = rng.standard_normal((3, 5))
    obs = ScalarObservations(np.empty(0), np.empty(0, dtype=int), 1.0)
    out = esrf_assimilate(X, obs, EsrfParams(inflation=0.2))
    np.testing.assert_allclose(out, reconstitute(inflate(decompose(X), 0.2)), atol=1e-14)


def test_assimilate_single_observation_is_composition(rng):
    X = rng.standard_normal((4, 7))
    obs = ScalarObservations([0.3], [2], 0.4)
    out = esrf_assimilate(X, obs, EsrfParams(localization=1.5))
    manual = reconstitute(esrf_scalar_update(decompose(X), 0.3, 2, 0.4, localization_taper(2, 1.5, 4)))
    np.testing.assert_allclose(out, manual, atol=1e-14)


def test_two_observations_match_batch_kalman(rng):
    X = rng.standard_normal((6, 12))
    obs = ScalarObservations([0.5, -1.0], [1, 4], [0.3, 0.8])
    dec = decompose(esrf_assimilate(X, obs, EsrfParams()))
    prior = decompose(X)
    mean, P = kalman_posterior(prior.mean, prior.covariance(), obs.indices, obs.values, obs.variances())
    np.testing.assert_allclose(dec.mean, mean, atol=1e-8)
    np.testing.assert_allclose(dec.covariance(), P, atol=1e-8)


def test_observation_order_does_not_change_moments(rng):
    dec = decompose(rng.standard_normal((5, 8)))
    a = esrf_scalar_update(esrf_scalar_update(dec, 1.0, 0, 0.5), -0.5, 3, 0.2)
    b = esrf_scalar_update(esrf_scalar_update(dec, -0.5, 3, 0.2), 1.0, 0, 0.5)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-8)
    np.testing.assert_allclose(a.covariance(), b.covariance(), atol=1e-8)


def test_esrf_update_localization_uses_periodic_taper(rng):
    dec = decompose(rng.standard_normal((10, 6)))
    obs = ScalarObservations([0.7], [9], 0.5)
    out = esrf_update(dec, obs, 2.0)
    ref = esrf_scalar_update(dec, 0.7, 9, 0.5, localization_taper(9, 2.0, 10))
    np.testing.assert_allclose(out.A, ref.A, atol=1e-14)


def test_haar_m1_signs(rng):
    draws = np.array([sample_haar_orthogonal(1, rng)[0, 0] for _ in range(4000)])
    assert set(np.unique(draws)) <= {-1.0, 1.0}
    assert abs(np.mean(draws == 1.0) - 0.5) < 3 * 0.5 / math.sqrt(4000)


def test_haar_orthogonal_and_centered(rng):
    first = []
    for _ in range(10_000):
        P = sample_haar_orthogonal(3, rng)
        first.append(P[0, 0])
    np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-10)
    first = np.array(first)
    assert abs(first.mean()) < 3 * first.std() / math.sqrt(first.size)


def test_householder_basis():
    U = householder_ones_basis(6)
    np.testing.assert_allclose(U.T @ U, np.eye(6), atol=1e-12)
    np.testing.assert_allclose(U[:, 0], np.full(6, 1 / math.sqrt(6)), atol=1e-12)


def test_rotation_properties(rng):
    A = decompose(rng.standard_normal((4, 10))).A
    factory = RotationFactory(10, rng)
    Q = factory.sample()
    np.testing.assert_allclose(Q.T @ Q, np.eye(10), atol=1e-10)
    np.testing.assert_allclose(Q @ np.ones(10), np.ones(10), atol=1e-10)
    AQ = mean_preserving_rotation(A, factory)
    np.testing.assert_allclose(AQ.sum(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(AQ @ AQ.T, A @ A.T, atol=1e-10)


def test_rotation_identity_P_is_exact(rng):
    A = decompose(rng.standard_normal((3, 7))).A
    out = mean_preserving_rotation(A, RotationFactory(7, rng), P=np.eye(6))
    np.testing.assert_array_equal(out, A)


def test_rotation_breaks_duplicates(rng):
    X = rng.standard_normal((3, 4))[:, [0, 0, 1, 1, 2, 2, 3, 3]]
    dec = decompose(X)
    AQ = mean_preserving_rotation(dec.A, RotationFactory(8, rng))
    cols = {tuple(np.round(c, 12)) for c in AQ.T}
    assert len(cols) == 8


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        EsrfParams(inflation=-0.1)
    with pytest.raises(InvalidParameterError):
        EsrfParams(localization=0.0)
