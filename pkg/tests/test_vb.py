import numpy as np
import pytest

from qfavar.gibbs import MeasurementParams, sample_measurement_block
from qfavar.shrinkage import HorseshoeState

from qfavar.distributions import ALParams, al_mixture_draw, gig_moments
from qfavar.model import ModelLayout, block_data, measurement_design
from qfavar.panel import ModelConfig, PriorSettings, VBSettings
from qfavar.simulate import simulate_qfavar
from qfavar.vb import (_initial_variational_state, _lagmat, extract_reference_factors, relative_change, run_vb, vb_update_measurement, vb_update_state,
                       vbqfa_extract)

RIDGE = PriorSettings(shrinkage="ridge", ridge_var=100.0, ridge_var_state=100.0)


def test_single_series_factor_is_the_series():
    rng = np.random.default_rng(0)
    y = np.cumsum(rng.normal(size=200))[:, None]
    y = y + 1e-3 * rng.normal(size=y.shape)
    res = vbqfa_extract(y, 0.5)
    assert np.corrcoef(res.factor, y[:, 0])[0, 1] > 0.99
    assert res.loadings[0] == 1.0


def _block(T, n, rng, noise=0.3):
    f = np.zeros(T)
    for t in range(1, T):
        f[t] = 0.7 * f[t - 1] + rng.normal()
    lam = np.r_[1.0, rng.uniform(0.5, 1.5, n - 1)]
    y = f[:, None] * lam + noise * rng.normal(size=(T, n))
    return y, f


def test_nine_series_recovery():
    y, f = _block(300, 9, np.random.default_rng(1))
    res = vbqfa_extract(y, 0.5)
    assert np.corrcoef(res.factor, f)[0, 1] > 0.9
    assert res.converged


def test_symmetric_dgp_tail_factors_differ_by_level():
    rng = np.random.default_rng(2)
    T, n, s = 300, 9, 0.5
    y, f = _block(T, n, rng, noise=0.0)
    y = y + s * rng.normal(size=(T, n))
    lo = vbqfa_extract(y, 0.1).factor
    hi = vbqfa_extract(y, 0.9).factor
    gap = np.mean(hi - lo)
    true_gap = 2 * 1.2815515655446004 * s
    assert abs(gap / true_gap - 1) < 0.1
    assert np.corrcoef(lo, hi)[0, 1] > 0.95


def _vb_problem(seed=3, T=400, q=(0.1, 0.5, 0.9)):
    panel, truth = simulate_qfavar(dict(m=1, n=4, k=1, T=T, p=1), rng=seed)
    lay = ModelLayout(1, 4, 1, q, 1)
    Y, G = panel.values, panel.globals
    F = extract_reference_factors(Y, lay)[0]
    yb, ylagb = block_data(lay, Y, np.zeros_like(Y))
    X = measurement_design(lay, ylagb, F, G)
    S, Xv = _lagmat(np.concatenate([F, G], axis=1), 1, True)
    vs = _initial_variational_state(lay, yb, X, S, Xv, RIDGE, True)
    return lay, yb, X, S, Xv, vs, truth


def test_cavi_fixed_point():
    lay, yb, X, S, Xv, vs, _ = _vb_problem()
    for _ in range(5000):
        old = vs.vector()
        vs = vb_update_state(S, Xv, vb_update_measurement(yb, X, lay, vs, RIDGE), RIDGE)
        if relative_change(vs.vector(), old) < 1e-14:
            break
    a = vb_update_state(S, Xv, vb_update_measurement(yb, X, lay, vs, RIDGE), RIDGE)
    b = vb_update_state(S, Xv, vb_update_measurement(yb, X, lay, a, RIDGE), RIDGE)
    assert relative_change(a.vector(), vs.vector()) < 1e-12
    assert relative_change(b.vector(), a.vector()) < 1e-12


def _long_sample(rng):
    T = 2000
    lay = ModelLayout(1, 2, 1, (0.5,), 1)
    f = rng.normal(size=(T, 1))
    g = rng.normal(size=(T, 1))
    u, _ = al_mixture_draw(ALParams(0.5, 0.2), rng, (T, 2))
    truth = np.array([0.4, 0.0, 1.3, 0.5])
    Y = np.column_stack([f[:, 0] + u[:, 0], truth[0] + truth[2] * f[:, 0] + truth[3] * g[:, 0] + u[:, 1]])
    yb, ylagb = block_data(lay, Y, np.zeros_like(Y))
    X = measurement_design(lay, ylagb, f, g)
    S, Xv = _lagmat(np.concatenate([f, g], axis=1), 1, True)
    vs = _initial_variational_state(lay, yb, X, S, Xv, RIDGE, True)
    for _ in range(200):
        vs = vb_update_measurement(yb, X, lay, vs, RIDGE)
    return lay, yb, X, vs, truth


def test_measurement_recovery_long_sample():
    # mean-field variances are about half the exact posterior variances here
    _, _, _, vs, truth = _long_sample(np.random.default_rng(4))
    mu, sd = vs.mu_phi[1], np.sqrt(np.diag(vs.Sigma_phi[1]))
    assert np.all(vs.ez > 0) and np.all(vs.einvz > 0)
    for j in (0, 2, 3):
        assert abs(mu[j] - truth[j]) < 3 * sd[j]


def test_measurement_means_match_gibbs():
    rng = np.random.default_rng(4)
    lay, yb, X, vs, _ = _long_sample(rng)
    k1, k2 = lay.kappas
    free, fixed = lay.free_mask[1:], lay.fixed_values[1:]
    params = MeasurementParams(fixed.copy(), np.ones(1), np.ones((1, yb.shape[1])), HorseshoeState.initial((1, 4)))
    draws = []
    for it in range(1500):
        params = sample_measurement_block(yb[1:], X[1:], k1[1:], k2[1:], params, free, fixed, RIDGE, rng)
        if it >= 300:
            draws.append(params.phi[0].copy())
    draws = np.array(draws)
    for j in (0, 2, 3):
        assert abs(vs.mu_phi[1, j] - draws[:, j].mean()) < draws[:, j].std()


def test_gig_mean_above_mode_in_updates():
    rng = np.random.default_rng(5)
    delta = rng.uniform(0.01, 10, 1000)
    rho = rng.uniform(1e-6, 10, 1000)
    ez, _ = gig_moments(delta, rho)
    mode = (-0.5 + np.sqrt(0.25 + delta * rho)) / delta
    assert np.all(ez >= mode)


def test_state_update_recovers_var():
    rng = np.random.default_rng(6)
    Phi = np.array([[0.6, 0.2, 0.0], [0.0, 0.5, 0.1], [0.1, 0.0, 0.4]])
    S_full = np.zeros((1001, 3))
    for t in range(1, 1001):
        S_full[t] = Phi @ S_full[t - 1] + rng.normal(size=3)
    S, Xv = _lagmat(S_full, 1, True)
    lay = ModelLayout(1, 1, 2, (0.5,), 1)
    yb = S_full[:, :1].T
    X = measurement_design(lay, np.zeros_like(yb), S_full[:, :1], S_full[:, 1:])
    vs = _initial_variational_state(lay, yb, X, S, Xv, RIDGE, True)
    for _ in range(50):
        vs = vb_update_state(S, Xv, vs, RIDGE)
    est = np.stack([m[1:4] for m in vs.mu_psi])
    assert np.corrcoef(est.ravel(), Phi.ravel())[0, 1] > 0.95
    assert vs.mu_psi[0].size == 4  # first row has no contemporaneous block
    assert vs.mu_psi[2].size == 6


def test_state_update_singular_design():
    S = np.ones((20, 2))
    Xv = np.ones((20, 2))
    lay, yb, X, _, _, vs, _ = _vb_problem()
    vs.mu_psi = [np.zeros(2), np.zeros(3)]
    vs.Sigma_psi = [np.zeros((2, 2)), np.zeros((3, 3))]
    vs.e_inv_omega = np.ones(2)
    pri = PriorSettings(shrinkage="ridge", ridge_var_state=1e300, intercept_var=1e300, sigma_a=1e300)
    with pytest.raises(np.linalg.LinAlgError, match="row"):
        vb_update_state(S, Xv, vs, pri)


@pytest.fixture(scope="module")
def panel():
    return simulate_qfavar(dict(m=1, n=3, k=1, T=120, p=1), rng=7)[0]


def test_infinite_tolerance_one_sweep(panel):
    cfg = ModelConfig(p=1, vb=dict(tolerance=float("inf")))
    d = run_vb(panel, cfg)
    assert d.diagnostics["iterations"] == 1
    assert d.diagnostics["converged"]


def test_run_vb_deterministic_and_identified(panel):
    cfg = ModelConfig(p=1)
    a, b = run_vb(panel, cfg), run_vb(panel, cfg)
    assert a.diagnostics["converged"]
    for name in ("lam", "Phi", "F", "sigma"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert np.all(a.lam[:, a.layout.is_reference] == 1.0)
    assert a.n_draws == 1


def test_fine_grid_state_dimension():
    panel, _ = simulate_qfavar(dict(m=5, n=2, k=4, T=60, p=1), rng=8)
    cfg = ModelConfig(p=1, quantiles=(0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95),
                      vb=VBSettings(max_iters=2, step1_max_iters=5))
    d = run_vb(panel, cfg)
    assert d.layout.l == 39
    assert d.Phi.shape[-1] == 39
