import numpy as np
import pytest

from hybridfilter.ensemble import InvalidParameterError
from hybridfilter.models import (
    L96Config,
    ModelBlowUpError,
    build_projector,
    henon_step,
    l96_tendency,
    rk4_integrate,
)


@pytest.mark.parametrize("u0,v0,expected", [(0, 0, (1, 0)), (1, 0, (-0.4, 0.3)), (0, 1, (2, 0))])
def test_henon_step(u0, v0, expected):
    np.testing.assert_allclose(henon_step(u0, v0), expected, atol=1e-15)


def dense_projector(J):
    """T built term by term from the truncated inverse DFT."""
    n = 41 * J
    T = np.zeros((41, n))
    for j in range(41):
        for i in range(n):
            T[j, i] = sum(np.cos(2 * np.pi * k * (j * J - i) / n) for k in range(-20, 21)) / n
    return T


def literal_tendency(x, h, F, J):
    n = x.size
    T = dense_projector(J)
    X = T @ x
    NL = np.array([-X[(k - 1) % 41] * (X[(k - 2) % 41] - X[(k + 1) % 41]) for k in range(41)])
    NS = np.array([-x[(i + 1) % n] * (x[(i + 2) % n] - x[(i - 1) % n]) for i in range(n)])
    return h * NS + J * T.T @ NL - x + F


def test_projector_matches_dense_dft():
    P = build_projector(3)
    np.testing.assert_allclose(P.matrix(), dense_projector(3), atol=1e-12)


@pytest.mark.parametrize("J", [1, 2, 8])
def test_projector_examples(J):
    P = build_projector(J)
    n = 41 * J
    i = np.arange(n)
    j = np.arange(41)
    np.testing.assert_allclose(P.forward(np.full(n, 2.5)), np.full(41, 2.5), atol=1e-12)
    np.testing.assert_allclose(P.forward(np.cos(2 * np.pi * 20 * i / n)), np.cos(2 * np.pi * 20 * j / 41), atol=1e-10)
    if J > 1:
        np.testing.assert_allclose(P.forward(np.cos(2 * np.pi * 21 * i / n)), 0.0, atol=1e-10)


def test_projector_identities(rng):
    J = 4
    P = build_projector(J)
    n = 41 * J
    np.testing.assert_allclose(P.back(P.forward(np.full(n, -1.5))), -1.5, atol=1e-10)
    Y = rng.standard_normal(41)
    np.testing.assert_allclose(P.forward(P.back(Y)), Y, atol=1e-10)
    x = rng.standard_normal(n)
    assert P.forward(x) @ Y == pytest.approx((x @ P.back(Y)) / J, abs=1e-10)


def test_build_projector_rejects_bad_J():
    with pytest.raises(InvalidParameterError):
        build_projector(0)


def test_tendency_simple_fields():
    cfg = L96Config(h=0.38, F=8.0, J=2)
    P = build_projector(2)
    np.testing.assert_allclose(l96_tendency(np.zeros(cfg.n), cfg, P), 8.0)
    np.testing.assert_allclose(l96_tendency(np.full(cfg.n, 3.0), cfg, P), 5.0, atol=1e-12)


def test_tendency_matches_literal_equations(rng):
    cfg = L96Config(h=0.38, F=8.0, J=4)
    P = build_projector(4)
    x = rng.standard_normal(cfg.n) * 3
    np.testing.assert_allclose(l96_tendency(x, cfg, P), literal_tendency(x, cfg.h, cfg.F, cfg.J), atol=1e-10)


def test_tendency_vectorized_over_members(rng):
    cfg = L96Config(J=2)
    P = build_projector(2)
    X = rng.standard_normal((cfg.n, 5))
    batch = l96_tendency(X, cfg, P)
    for m in range(5):
        np.testing.assert_allclose(batch[:, m], l96_tendency(X[:, m], cfg, P), atol=1e-12)


def test_tendency_rotation_equivariance(rng):
    cfg = L96Config(J=4)
    P = build_projector(4)
    x = rng.standard_normal(cfg.n)
    shifted = l96_tendency(np.roll(x, cfg.J), cfg, P)
    np.testing.assert_allclose(shifted, np.roll(l96_tendency(x, cfg, P), cfg.J), atol=1e-10)


def test_tendency_length_mismatch():
    with pytest.raises(InvalidParameterError):
        l96_tendency(np.zeros(10), L96Config(J=1), build_projector(1))


def linear(x, cfg, proj):
    return -x + cfg.F


def test_rk4_zero_duration(rng):
    cfg = L96Config(J=1)
    x0 = rng.standard_normal(cfg.n)
    np.testing.assert_array_equal(rk4_integrate(x0, 0.0, 0.01, cfg, build_projector(1)), x0)


def test_rk4_linear_system_fourth_order(rng):
    cfg = L96Config(h=0.0, F=8.0, J=1)
    P = build_projector(1)
    x0 = rng.standard_normal(cfg.n)
    exact = cfg.F + (x0 - cfg.F) * np.exp(-1.0)
    errors = []
    for dt in (0.1, 0.05, 0.025):
        x = rk4_integrate(x0, 1.0, dt, cfg, P, tendency=linear)
        errors.append(np.max(np.abs(x - exact)))
    assert errors[-1] < 1e-7
    for coarse, fine in zip(errors, errors[1:]):
        assert 14 < coarse / fine < 18


def test_rk4_shortened_last_step(rng):
    cfg = L96Config(h=0.0, J=1)
    x0 = rng.standard_normal(cfg.n)
    x = rk4_integrate(x0, 0.33, 0.1, cfg, build_projector(1), tendency=linear)
    np.testing.assert_allclose(x, cfg.F + (x0 - cfg.F) * np.exp(-0.33), atol=1e-5)


def test_rk4_step_halving_at_production_dt():
    cfg = L96Config(J=4)
    P = build_projector(4)
    x0 = np.random.default_rng(3).standard_normal(cfg.n)
    x0 = rk4_integrate(x0, 9.0, 0.005, cfg, P)
    a = rk4_integrate(x0, 1.2, 0.005, cfg, P)
    b = rk4_integrate(x0, 1.2, 0.0025, cfg, P)
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-5


def test_rk4_blowup_names_time():
    cfg = L96Config(J=1)

    def explosive(x, cfg, proj):
        return x ** 2

    with pytest.raises(ModelBlowUpError) as err:
        rk4_integrate(np.full(cfg.n, 10.0), 5.0, 0.01, cfg, build_projector(1), tendency=explosive)
    assert 0 < err.value.time < 5.0
    assert "t =" in str(err.value)


def test_rk4_rejects_bad_dt():
    cfg = L96Config(J=1)
    with pytest.raises(InvalidParameterError):
        rk4_integrate(np.zeros(cfg.n), 1.0, 0.0, cfg, build_projector(1))
