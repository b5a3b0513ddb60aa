import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfavar.structural import (connectedness, gfevd, girf, ma_coefficients, project_to_measurement,
                               variable_fevd)

PHI2 = np.array([[0.5, 0.2], [0.0, 0.4]])


def test_scalar_girf_analytic():
    res = girf(np.array([[[0.5]]]), np.array([[4.0]]), 0, 10)
    np.testing.assert_array_equal(res.median[:, 0], 2.0 * 0.5 ** np.arange(11))


def test_white_noise_girf():
    res = girf(np.zeros((1, 3, 3)), np.eye(3), 1, 5)
    expected = np.zeros((6, 3))
    expected[0, 1] = 1.0
    np.testing.assert_array_equal(res.median, expected)


def test_girf_impact_is_scaled_omega_column():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 3))
    Om = W @ W.T + np.eye(3)
    res = girf(rng.normal(size=(1, 3, 3)) * 0.3, Om, 2, 4)
    np.testing.assert_array_equal(res.draws[0, 0], Om[:, 2] / np.sqrt(Om[2, 2]))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0))
def test_girf_homogeneity(c):
    rng = np.random.default_rng(1)
    W = rng.normal(size=(2, 2))
    Om = W @ W.T + np.eye(2)
    a = girf(PHI2, Om, 0, 6).draws
    b = girf(PHI2, c ** 2 * Om, 0, 6).draws
    np.testing.assert_allclose(b, c * a, rtol=1e-12, atol=1e-14)


def test_girf_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        girf(PHI2, np.diag([1.0, 0.0]), 1, 3)


def test_ma_coefficients_var2():
    Phi = np.stack([PHI2, 0.1 * np.eye(2)])
    Psi = ma_coefficients(Phi, 3)
    np.testing.assert_array_equal(Psi[0], np.eye(2))
    np.testing.assert_allclose(Psi[1], PHI2)
    np.testing.assert_allclose(Psi[2], PHI2 @ PHI2 + 0.1 * np.eye(2))
    np.testing.assert_allclose(Psi[3], PHI2 @ Psi[2] + 0.1 * Psi[1])


def test_projection_rules():
    rng = np.random.default_rng(2)
    paths = rng.normal(size=(4, 7, 3))
    unit = np.array([[1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(project_to_measurement(paths, unit)[..., 0], paths[..., 0])
    lam = np.array([[2.5, 0.0, 0.0], [0.0, -0.7, 0.0]])
    out = project_to_measurement(paths, lam)
    np.testing.assert_allclose(out[..., 0], 2.5 * paths[..., 0])
    np.testing.assert_allclose(out[..., 1], -0.7 * paths[..., 1])
    np.testing.assert_array_equal(project_to_measurement(np.zeros((2, 5, 3)), lam), 0.0)
    with pytest.raises(ValueError):
        project_to_measurement(paths, np.ones((2, 4)))


def test_scalar_and_white_noise_fevd():
    res = gfevd(np.array([[[0.7]]]), np.array([[2.0]]), 5)
    assert res.state[0, 0, 0] == 1.0
    res = gfevd(np.zeros((1, 3, 3)), np.diag([1.0, 2.0, 3.0]), 4)
    np.testing.assert_array_equal(res.state[0], np.eye(3))


def _mc_shares(Phi, Om, H, n, seed):
    """Generalized shares as R^2 of the H-step forecast error on one shock's path."""
    rng = np.random.default_rng(seed)
    l = Phi.shape[0]
    C = np.linalg.cholesky(Om)
    u = rng.standard_normal((H, n, l)) @ C.T
    Psi = ma_coefficients(Phi[None], H - 1)
    err = sum(u[H - 1 - h] @ Psi[h].T for h in range(H))
    out = np.empty((l, l))
    for j in range(l):
        Z = u[:, :, j].T
        for i in range(l):
            coef = np.linalg.lstsq(Z, err[:, i], rcond=None)[0]
            fit = Z @ coef
            out[i, j] = fit @ fit / (err[:, i] @ err[:, i])
    return out


def test_fevd_matches_monte_carlo():
    res = gfevd(PHI2, np.eye(2), 2)
    mc = _mc_shares(PHI2, np.eye(2), 2, 4_000_000, 3)
    assert np.max(np.abs(res.state_raw[0] - mc)) <= 1e-3
    np.testing.assert_allclose(res.state[0].sum(axis=1), 1.0)


def test_fevd_correlated_shocks_monte_carlo():
    Om = np.array([[1.0, 0.5], [0.5, 2.0]])
    res = gfevd(PHI2, Om, 3)
    mc = _mc_shares(PHI2, Om, 3, 2_000_000, 4)
    assert np.max(np.abs(res.state_raw[0] - mc)) <= 2e-3
    assert np.all(res.state_raw[0].sum(axis=1) >= 1.0 - 1e-12)


def test_fevd_permutation_equivariance():
    rng = np.random.default_rng(5)
    Phi = 0.3 * rng.normal(size=(2, 4, 4))
    W = rng.normal(size=(4, 4))
    Om = W @ W.T + np.eye(4)
    perm = np.array([2, 0, 3, 1])
    P = np.eye(4)[perm]
    a = gfevd(Phi, Om, 6).state[0]
    b = gfevd(P @ Phi @ P.T, P @ Om @ P.T, 6).state[0]
    np.testing.assert_allclose(b, a[np.ix_(perm, perm)], rtol=1e-12, atol=1e-15)


def test_variable_fevd_unit_projection():
    rng = np.random.default_rng(6)
    Phi = 0.3 * rng.normal(size=(1, 3, 3))
    W = rng.normal(size=(3, 3))
    Om = W @ W.T + np.eye(3)
    M = np.array([[1.0, 0.0, 0.0], [0.4, 1.1, -0.2]])
    res = gfevd(Phi, Om, 8, M)
    np.testing.assert_allclose(res.variable[0, 0], res.state[0, 0], rtol=1e-12)
    np.testing.assert_allclose(variable_fevd(Phi, Om, M, 8)[0].sum(axis=1), 1.0)


def _shares(rng, B, l):
    D = rng.uniform(size=(B, l))
    Ds = rng.uniform(size=(l, l))
    return D / D.sum(1, keepdims=True), Ds / Ds.sum(1, keepdims=True)


def test_connectedness_structure():
    rng = np.random.default_rng(7)
    D, Ds = _shares(rng, 4, 3)
    cm = connectedness(D, Ds, 0.05)
    np.testing.assert_array_equal(cm.matrix[:, :4], 0.0)
    np.testing.assert_array_equal(cm.matrix[:4, 4:], D)
    assert len(connectedness(D, Ds, 1 - 1e-12).edges) == 0
    assert (cm.edges["source"] != cm.edges["target"]).all()
    assert cm.to_dot().startswith("digraph")


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.99), st.floats(0, 0.99), st.integers(0, 1000))
def test_threshold_monotone(t1, t2, seed):
    lo, hi = sorted((t1, t2))
    D, Ds = _shares(np.random.default_rng(seed), 3, 2)
    e_lo = set(map(tuple, connectedness(D, Ds, lo).edges[["source", "target"]].values))
    e_hi = set(map(tuple, connectedness(D, Ds, hi).edges[["source", "target"]].values))
    assert e_hi <= e_lo


@pytest.mark.parametrize("t", [1.0, -0.1, 1.5])
def test_threshold_domain(t):
    D, Ds = _shares(np.random.default_rng(8), 2, 2)
    with pytest.raises(ValueError):
        connectedness(D, Ds, t)
