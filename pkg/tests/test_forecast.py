import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from qfavar.forecast import (density_from_quantiles, favar_gaussian_quantiles, forecast_fan, forecast_quantiles,
                             forecast_states, poos_origins, recursive_poos)
from qfavar.model import ModelLayout, PosteriorDraws
from qfavar.panel import ModelConfig
from qfavar.simulate import simulate_qfavar

FINE = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)


def make_draws(Phi, F_last, quantiles=(0.5,), m=1, n=1, k=0, lam=None, gaussian=False, sigma=1.0, v=None):
    Phi = np.asarray(Phi, dtype=float)
    D = Phi.shape[0]
    lay = ModelLayout(m, n, k, tuple(quantiles), Phi.shape[1], gaussian=gaussian)
    B, l, T = lay.n_blocks, lay.l, 5
    F = np.zeros((D, T, lay.n_factors))
    F[:, -1] = F_last
    lam = np.ones((D, B)) if lam is None else np.broadcast_to(lam, (D, B)).copy()
    return PosteriorDraws(
        "mcmc", "FAVAR" if gaussian else "QFAVAR", lay, c=np.zeros((D, B)), beta=np.zeros((D, B)), lam=lam,
        gamma=np.zeros((D, B, k)), sigma=np.full((D, B), sigma), v=np.zeros((D, l)) if v is None else v,
        Phi=Phi, A=np.broadcast_to(np.eye(l), (D, l, l)).copy(), h_mean=np.zeros((D, l)),
        h_last=np.zeros((D, l)), F=F, Y=np.zeros((T, lay.n_series)), G=np.zeros((T, k)),
        time_index=[f"2000-0{i + 1}-01" for i in range(T)], indicator_labels=[f"I{i}" for i in range(m)],
        country_labels=[f"C{j}" for j in range(n)], global_labels=[], config={"quantiles": list(quantiles)})


def test_geometric_decay():
    d = make_draws(np.full((1, 1, 1, 1), 0.5), 2.0)
    np.testing.assert_allclose(forecast_states(d, 3).paths[0, :, 0], [1.0, 0.5, 0.25], rtol=0, atol=1e-15)


def test_zero_var_gives_zero_forecasts():
    d = make_draws(np.zeros((2, 2, 1, 1)), 3.0)
    assert np.all(forecast_states(d, 5).paths == 0.0)


def test_explosive_draws_filtered():
    Phi = np.array([[[[0.5]]], [[[1.2]]], [[[0.9]]]])
    d = make_draws(Phi, 1.0)
    sf = forecast_states(d, 2, filter_explosive=True)
    assert sf.excluded == 1
    np.testing.assert_array_equal(sf.kept, [True, False, True])
    assert forecast_states(d, 2).paths.shape[0] == 3
    with pytest.raises(ValueError):
        forecast_states(make_draws(Phi[1:2], 1.0), 2, filter_explosive=True)
    with pytest.raises(ValueError):
        forecast_states(d, 0)


def test_unit_projection_and_monotonicity():
    S = np.array([[[1.0], [2.0], [3.0]]])
    np.testing.assert_array_equal(forecast_quantiles(S, np.array([[1.0]]))[:, 0], [1.0, 2.0, 3.0])
    M = np.array([[0.5], [2.0]])
    out = forecast_quantiles(S, M)
    assert np.all(np.diff(out, axis=0) > 0)
    with pytest.raises(ValueError):
        forecast_quantiles(S, np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100))
def test_projection_linearity(a):
    rng = np.random.default_rng(0)
    S = rng.normal(size=(3, 4, 2))
    M = rng.normal(size=(5, 2))
    np.testing.assert_allclose(forecast_quantiles(a * S, M), a * forecast_quantiles(S, M), rtol=1e-12, atol=1e-9)


def test_fine_grid_fan():
    d = make_draws(np.full((1, 1, 7, 7), 0.0) + 0.5 * np.eye(7), np.arange(7.0), quantiles=FINE, m=1, n=2,
                   lam=np.tile([1.0, 1.5], 7))
    fan = forecast_fan(d, 4)
    assert fan.values.shape == (4, 2, 7)
    np.testing.assert_allclose(fan.values[0, 1], 1.5 * 0.5 * np.arange(7.0))
    frame = fan.to_frame()
    assert list(frame.columns) == ["model", "origin", "horizon", "variable", "quantile", "value"]
    assert len(frame) == 4 * 2 * 7


def test_gaussian_predictive_quantiles():
    # white-noise state with unit variance plus unit measurement noise
    d = make_draws(np.zeros((1, 1, 1, 1)), 0.0, gaussian=True, sigma=1.0)
    q = favar_gaussian_quantiles(d, 2, (0.1, 0.5, 0.9))
    np.testing.assert_allclose(q[0, 0], np.sqrt(2.0) * norm.ppf([0.1, 0.5, 0.9]), atol=1e-12)


def test_density_spike(caplog):
    with caplog.at_level(logging.WARNING):
        grid, dens = density_from_quantiles([0.1, 0.5, 0.9], [3.0, 3.0, 3.0])
    assert "spike" in caplog.text
    assert abs(grid[np.argmax(dens)] - 3.0) < 1e-5
    assert np.trapezoid(dens, grid) == pytest.approx(1.0)


def test_density_symmetric():
    vals = np.array([-2.0, -1.0, -0.3, 0.0, 0.3, 1.0, 2.0])
    grid, dens = density_from_quantiles(FINE, vals)
    np.testing.assert_allclose(grid, -grid[::-1], atol=1e-12)
    assert np.max(np.abs(dens - dens[::-1])) <= 1e-10


def test_density_from_normal_quantiles():
    grid, dens = density_from_quantiles(FINE, norm.ppf(FINE))
    mean = np.trapezoid(grid * dens, grid)
    sd = np.sqrt(np.trapezoid((grid - mean) ** 2 * dens, grid))
    assert abs(mean) <= 0.05
    assert abs(sd - 1.0) <= 0.15


def test_origin_schedule():
    ends = poos_origins(324, 6, 0.5)
    assert len(ends) == 162
    assert ends[0] == 162
    scored = {h: sum(e - 1 + h < 324 for e in ends) for h in (1, 24)}
    assert scored[1] == 162
    # the last 24-step forecast is made 24 periods before the sample end
    assert max(e for e in ends if e - 1 + 24 < 324) == 324 - 24
    with pytest.raises(ValueError):
        poos_origins(30, 6, 0.5)


@pytest.fixture(scope="module")
def sim_panel():
    return simulate_qfavar(dict(m=1, n=3, k=1, T=60, p=1), rng=3)[0]


def test_poos_scores_checkpoint_resume(sim_panel, tmp_path):
    cfg = ModelConfig(p=1, vb=dict(max_iters=50))
    kw = dict(models=("QFAVAR", "FAVAR"), horizons=(1, 3), start_fraction=0.5, step=5)
    a = recursive_poos(sim_panel, cfg, checkpoint_dir=tmp_path / "ck", **kw)
    f = a.frame
    assert set(f["model"]) == {"QFAVAR", "FAVAR"}
    # FAVAR is scored at the requested tails through its Gaussian predictive
    assert set(np.round(f.loc[f.model == "FAVAR", "quantile"], 6)) == {0.1, 0.5, 0.9}
    assert np.all(f["loss"] >= 0)
    cum = a.cumulative()
    assert (cum.groupby(["model", "variable", "quantile", "horizon"])["cumulative"].diff().dropna() >= 0).all()
    files = sorted((tmp_path / "ck").iterdir())
    assert len(files) == len(poos_origins(60, 1, 0.5, 5))
    b = recursive_poos(sim_panel, cfg, checkpoint_dir=tmp_path / "ck", **kw)
    assert a.frame.equals(b.frame)
    # a different configuration ignores stale checkpoints
    c = recursive_poos(sim_panel, cfg.replace(quantiles=(0.25, 0.5, 0.75)), checkpoint_dir=tmp_path / "ck", **kw)
    assert set(np.round(c.frame.loc[c.frame.model == "QFAVAR", "quantile"], 6)) == {0.25, 0.5, 0.75}


def test_poos_rejects_unknown_model(sim_panel):
    with pytest.raises(ValueError):
        recursive_poos(sim_panel, ModelConfig(p=1), models=("ARIMA",))
