"""State and quantile forecasts, predictive densities and the recursive evaluation loop."""

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from .io import config_hash
from .statespace import build_companion, spectral_radius
from .validation import check_int, check_quantiles, check_random_state

log = logging.getLogger(__name__)

__all__ = ["ForecastFan", "StateForecast", "forecast_states", "forecast_quantiles", "forecast_fan",
           "favar_gaussian_quantiles", "density_from_quantiles", "recursive_poos", "fit_model",
           "POOS_HORIZONS", "poos_origins"]

POOS_HORIZONS = (1, 6, 12, 24)


@dataclass
class StateForecast:
    """Per-draw state forecasts ``paths`` of shape ``(D, H, l)`` for horizons ``1..H``.

    ``kept`` marks the posterior draws that were used; ``excluded`` counts
    explosive draws dropped by the filter.
    """

    paths: np.ndarray
    kept: np.ndarray
    excluded: int = 0


def forecast_states(draws, H, filter_explosive=False, simulate_shocks=False, rng=None, mode="last"):
    """Iterate the state VAR ``H`` steps ahead from the final state of every draw.

    Parameters
    ----------
    draws : PosteriorDraws
    H : int
        Number of steps (``>= 1``).
    filter_explosive : bool
        Drop draws whose companion matrix has spectral radius ``>= 1``.
    simulate_shocks : bool
        Add innovations drawn from ``N(0, Omega)``; the default iterates the
        conditional mean.
    mode : {"last", "mean"}
        Which log-variance defines ``Omega`` for simulated shocks.
    """
    H = check_int(H, "H", 1)
    rng = check_random_state(rng)
    lay = draws.layout
    l, p = lay.l, lay.p
    T = draws.Y.shape[0]
    if T < p:
        raise ValueError("sample shorter than the lag order")
    paths, kept = [], []
    for d in range(draws.n_draws):
        comp = build_companion(draws.v[d], draws.Phi[d])
        if filter_explosive and spectral_radius(comp.matrix) >= 1.0:
            kept.append(False)
            continue
        kept.append(True)
        S = draws.state_path(d)
        x = np.concatenate([S[T - 1 - lag] for lag in range(p)])
        chol = np.linalg.cholesky(draws.omega(d, mode)) if simulate_shocks else None
        out = np.empty((H, l))
        for h in range(H):
            x = comp.intercept + comp.matrix @ x
            if chol is not None:
                x[:l] += chol @ rng.standard_normal(l)
            out[h] = x[:l]
        paths.append(out)
    kept = np.array(kept)
    if not kept.any():
        raise ValueError("every draw is explosive")
    excluded = int((~kept).sum())
    if excluded:
        log.info("excluded %d explosive draws from the forecasts", excluded)
    return StateForecast(np.stack(paths), kept, excluded)


def forecast_quantiles(state_forecasts, loadings, intercepts=None, beta=None, y_last=None):
    """Project state forecasts to the measurement blocks and average over draws.

    Parameters
    ----------
    state_forecasts : ndarray (D, H, l) or StateForecast
    loadings : ndarray (B, l) or (D, B, l)
        ``[Lambda, Gamma]`` per block.
    intercepts : ndarray (B,) or (D, B), optional
    beta, y_last : ndarray, optional
        Own-lag coefficients ``(D, B)`` and the last observation of each block
        ``(B,)``; forecasts beyond one step use the block's own previous
        forecast as the lag.

    Returns
    -------
    ndarray (H, B)
        Posterior mean of the projected quantiles.
    """
    S = state_forecasts.paths if isinstance(state_forecasts, StateForecast) else np.asarray(state_forecasts, float)
    if S.ndim == 2:
        S = S[None]
    D, H, l = S.shape
    M = np.asarray(loadings, dtype=float)
    if M.shape[-1] != l:
        raise ValueError(f"loadings have {M.shape[-1]} columns, expected {l}")
    if M.ndim == 2:
        M = np.broadcast_to(M, (D,) + M.shape)
    if M.shape[0] != D:
        raise ValueError("per-draw loadings need one state forecast per draw")
    B = M.shape[1]
    c = np.zeros((D, B)) if intercepts is None else np.broadcast_to(np.asarray(intercepts, float), (D, B))
    out = np.matmul(S, np.swapaxes(M, 1, 2)) + c[:, None, :]
    if beta is not None:
        b = np.broadcast_to(np.asarray(beta, float), (D, B))
        if np.any(b != 0):
            if y_last is None:
                raise ValueError("own-lag forecasts need the last observation")
            lag = np.broadcast_to(np.asarray(y_last, float), (D, B)).copy()
            for h in range(H):
                out[:, h] += b * lag
                lag = out[:, h].copy()
    return out.mean(axis=0)


def _mean_forecast_variance(draws, d, H, mode):
    """Forecast-error variances ``(H, B)`` of the measurement blocks for draw ``d``."""
    from .structural import ma_coefficients

    Psi = ma_coefficients(draws.Phi[d], H - 1)
    Omega = draws.omega(d, mode)
    M, _ = draws.observation_matrix(d)
    C = M @ Psi
    state_var = np.cumsum(np.einsum("hbl,lm,hbm->hb", C, Omega, C), axis=0)
    return state_var + draws.sigma[d][None, :]


def favar_gaussian_quantiles(draws, H, quantiles, filter_explosive=False, mode="last"):
    """Gaussian predictive quantiles ``mean + z_q sd`` for a median-only fit.

    The predictive mean and variance combine the per-draw conditional means
    and forecast-error variances (state shocks plus measurement noise) by the
    law of total variance.

    Returns
    -------
    ndarray (H, n_series, Rq)
    """
    quantiles = check_quantiles(quantiles)
    lay = draws.layout
    if lay.R != 1:
        raise ValueError("Gaussian predictive quantiles need a single-quantile fit")
    sf = forecast_states(draws, H, filter_explosive)
    idx = np.flatnonzero(sf.kept)
    means, variances = [], []
    for pos, d in enumerate(idx):
        M, c = draws.observation_matrix(d)
        means.append(forecast_quantiles(sf.paths[pos:pos + 1], M, c, draws.beta[d:d + 1], draws.Y[-1]))
        variances.append(_mean_forecast_variance(draws, d, H, mode))
    means = np.stack(means)
    mean = means.mean(axis=0)
    var = np.stack(variances).mean(axis=0) + means.var(axis=0)
    z = norm.ppf(quantiles)
    return mean[:, :, None] + np.sqrt(var)[:, :, None] * z


@dataclass
class ForecastFan:
    """Quantile forecasts ``values[h-1, series, r]`` for horizons ``1..H``."""

    values: np.ndarray
    series_labels: list
    quantiles: tuple
    origin: str = ""
    model: str = ""

    @property
    def horizon(self):
        return self.values.shape[0]

    def to_frame(self):
        H, S, R = self.values.shape
        idx = pd.MultiIndex.from_product([range(1, H + 1), self.series_labels, self.quantiles],
                                         names=["horizon", "variable", "quantile"])
        df = pd.DataFrame({"value": self.values.reshape(-1)}, index=idx).reset_index()
        df.insert(0, "origin", self.origin)
        df.insert(0, "model", self.model)
        return df

    def density(self, h, series, grid_size=512):
        s = self.series_labels.index(series) if isinstance(series, str) else int(series)
        return density_from_quantiles(self.quantiles, self.values[h - 1, s], grid_size)


def forecast_fan(model, H, quantiles=None, filter_explosive=False):
    """Quantile forecasts of every series from a fitted model.

    ``model`` is a :class:`PosteriorDraws` or a :class:`qfavar.qar.QARFit`.
    A median-only Gaussian fit (FAVAR) is evaluated at ``quantiles`` through
    its Gaussian predictive distribution.
    """
    from .qar import QARFit

    if isinstance(model, QARFit):
        vals, qs = _select(model.forecast(H), tuple(model.quantiles), quantiles)
        return ForecastFan(vals, list(model.series_labels), qs, model.origin, model.variant)
    draws = model
    lay = draws.layout
    origin = draws.time_index[-1] if draws.time_index else ""
    if lay.gaussian:
        qs = tuple(check_quantiles(quantiles if quantiles is not None else draws.config.get("quantiles", (0.5,))))
        vals = favar_gaussian_quantiles(draws, H, qs, filter_explosive)
        return ForecastFan(vals, draws.series_labels, qs, origin, draws.variant)
    sf = forecast_states(draws, H, filter_explosive)
    idx = np.flatnonzero(sf.kept)
    M = np.stack([draws.observation_matrix(d)[0] for d in idx])
    blocks = forecast_quantiles(sf, M, draws.c[idx], draws.beta[idx],
                                draws.Y[-1][lay.block_series])
    S = lay.n_series
    vals = blocks.reshape(H, lay.R, S).transpose(0, 2, 1)
    vals, qs = _select(vals, tuple(lay.quantiles), quantiles)
    return ForecastFan(vals, draws.series_labels, qs, origin, draws.variant)


def _select(vals, qs, quantiles):
    if quantiles is None:
        return vals, qs
    want = tuple(check_quantiles(quantiles))
    missing = [q for q in want if not np.any(np.isclose(qs, q))]
    if missing:
        raise ValueError(f"quantile levels {missing} were not estimated")
    cols = [int(np.flatnonzero(np.isclose(qs, q))[0]) for q in want]
    return vals[:, :, cols], want


def _weighted_quantile(x, w, q):
    order = np.argsort(x)
    x, w = x[order], w[order]
    cdf = np.cumsum(w) - 0.5 * w
    return np.interp(q, cdf, x)


def density_from_quantiles(levels, values, grid_size=512):
    """Gaussian kernel density through a set of predicted quantiles.

    Each quantile value is a kernel centre weighted by the probability mass
    its level represents (half the distance to the neighbouring levels, with
    the outer masses extended to 0 and 1).  The bandwidth is Silverman's rule
    with weighted spread and the effective number of points.  The grid has
    ``grid_size`` points spanning the values plus three bandwidths on each
    side and the density is normalized to integrate to one.

    Returns
    -------
    grid, density : ndarray
    """
    levels = np.asarray(check_quantiles(levels), dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != levels.shape:
        raise ValueError("levels and values must have the same length")
    if not np.all(np.isfinite(values)):
        raise ValueError("quantile values must be finite")
    edges = np.concatenate([[0.0], 0.5 * (levels[1:] + levels[:-1]), [1.0]])
    w = np.diff(edges)
    w = w / w.sum()
    if np.unique(values).size < 2:
        log.warning("fewer than two distinct quantile values; returning a spike density")
        bw = 1e-6 * max(1.0, abs(values[0]))
    else:
        mean = np.sum(w * values)
        sd = np.sqrt(np.sum(w * (values - mean) ** 2))
        iqr = _weighted_quantile(values, w, 0.75) - _weighted_quantile(values, w, 0.25)
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        n_eff = 1.0 / np.sum(w ** 2)
        bw = 0.9 * spread * n_eff ** (-0.2)
    grid = np.linspace(values.min() - 3 * bw, values.max() + 3 * bw, grid_size)
    dens = (w[None, :] * norm.pdf((grid[:, None] - values[None, :]) / bw) / bw).sum(axis=1)
    dens /= np.trapezoid(dens, grid)
    return grid, dens


# ----------------------------------------------------------------------------
# recursive pseudo-out-of-sample evaluation


def fit_model(panel, config, variant):
    """Estimate one model variant on ``panel`` with the configured method."""
    from .gibbs import run_gibbs
    from .qar import fit_qar
    from .vb import run_vb

    cfg = config.replace(variant=variant)
    if variant in ("QAR", "QAR-X"):
        return fit_qar(panel, cfg)
    if variant == "FAVAR":
        cfg = cfg.replace(quantiles=(0.5,))
    return run_gibbs(panel, cfg) if cfg.method == "mcmc" else run_vb(panel, cfg)


def _origin_job(args):
    panel, config, models, end, horizons, quantiles, seed = args
    import dataclasses

    train = panel.slice(0, end)
    H = max(horizons)
    rows = []
    for variant in models:
        cfg = config
        if cfg.method == "mcmc":
            cfg = cfg.replace(mcmc=dataclasses.replace(cfg.mcmc, seed=int(seed)))
        fit = fit_model(train, cfg, variant)
        fan = forecast_fan(fit, H, quantiles)
        for h in horizons:
            t = end - 1 + h
            if t >= panel.T:
                continue
            for s, label in enumerate(fan.series_labels):
                y = panel.values[t, s]
                for r, q in enumerate(fan.quantiles):
                    pred = fan.values[h - 1, s, r]
                    rows.append([variant, label, q, h, str(panel.time_index[end - 1].date()),
                                 str(panel.time_index[t].date()), y, pred])
    return rows


def poos_origins(T, p, start_fraction=0.5, step=1):
    """Estimation-window lengths of the expanding-window loop.

    The first window holds ``floor(start_fraction * T)`` observations and
    later windows grow by ``step``; a window of length ``e`` forecasts
    targets ``e - 1 + h``.
    """
    if not 0 < start_fraction < 1:
        raise ValueError("start_fraction must lie in (0, 1)")
    first = int(np.floor(start_fraction * T))
    if first < p + 13:
        raise ValueError(f"first estimation window has {first} observations; need at least {p + 13}")
    return list(range(first, T, check_int(step, "step", 1)))


SCORE_COLUMNS = ["model", "variable", "quantile", "horizon", "origin", "target_date", "actual", "forecast"]


def recursive_poos(panel, config, models=("QFAVAR", "FAVAR"), horizons=POOS_HORIZONS, quantiles=None,
                   start_fraction=0.5, step=1, checkpoint_dir=None, threads=1, seed=None):
    """Expanding-window forecast evaluation.

    The first window holds ``floor(start_fraction * T)`` observations.  At
    every origin each model is re-estimated, forecasts for ``1..max(horizons)``
    are made, and every forecast whose target lies inside the sample is
    scored.  With ``checkpoint_dir`` each origin is written to its own file
    and reused on a rerun.  Every origin has its own seed derived from
    ``seed`` (or ``config.mcmc.seed``), so results do not depend on
    ``threads``.

    Returns
    -------
    ScoreSeries
    """
    from .evaluate import ScoreSeries

    horizons = tuple(sorted(check_int(h, "horizon", 1) for h in horizons))
    quantiles = tuple(check_quantiles(quantiles if quantiles is not None else config.quantiles))
    unknown = [m for m in models if m not in ("QFAVAR", "FAVAR", "QDFM", "QAR", "QAR-X")]
    if unknown:
        raise ValueError(f"unknown models {unknown}")
    ends = poos_origins(panel.T, config.p, start_fraction, step)
    base = seed if seed is not None else config.mcmc.seed
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base).spawn(len(ends))]
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    # a checkpoint is reused only when it was written under the same settings and data
    key = config_hash({"config": config.to_dict(), "models": list(models), "horizons": list(horizons),
                       "quantiles": list(quantiles), "seed": base,
                       "data": hashlib.sha256(np.ascontiguousarray(panel.values).tobytes()
                                              + np.ascontiguousarray(panel.globals).tobytes()).hexdigest()})
    results, todo = {}, []
    for end, s in zip(ends, seeds):
        path = ckpt / f"origin_{end:05d}.json" if ckpt else None
        saved = json.loads(path.read_text()) if path is not None and path.exists() else None
        if isinstance(saved, dict) and saved.get("key") == key:
            results[end] = saved["rows"]
        else:
            todo.append((panel, config, tuple(models), end, horizons, quantiles, s))
    if todo:
        if threads > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                outputs = list(pool.map(_origin_job, todo))
        else:
            outputs = [_origin_job(job) for job in todo]
        for job, rows in zip(todo, outputs):
            end = job[3]
            results[end] = rows
            if ckpt:
                tmp = ckpt / f"origin_{end:05d}.json.tmp"
                tmp.write_text(json.dumps({"key": key, "end": end, "rows": rows}))
                os.replace(tmp, ckpt / f"origin_{end:05d}.json")
    rows = [r for end in ends for r in results[end]]
    return ScoreSeries(pd.DataFrame(rows, columns=SCORE_COLUMNS))
