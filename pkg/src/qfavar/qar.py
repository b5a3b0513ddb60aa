"""Univariate quantile autoregressions (QAR) with optional global predictors (QAR-X).

Every series is its own model: for each quantile level the series is
regressed on an intercept and its own ``p`` lags (plus the ``p`` lags of the
globals for QAR-X) under the asymmetric Laplace likelihood, using the same
variational updates as the measurement equations of the factor model.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .distributions import gig_moments, mixture_constants
from .shrinkage import FLOOR, HorseshoeVBState, horseshoe_vb_update

log = logging.getLogger(__name__)

__all__ = ["QARFit", "vb_quantile_regression", "fit_qar"]


def vb_quantile_regression(y, X, q, priors, max_iters=500, tol=1e-6):
    """Variational Bayes quantile regression of ``y`` on ``X``.

    The first column of ``X`` is an intercept with prior ``N(0, intercept_var)``;
    the other coefficients get the horseshoe prior.

    Returns
    -------
    mu : ndarray (d,)
        Posterior mean of the coefficients.
    converged : bool
    """
    T, d = X.shape
    mc = mixture_constants(q)
    k1, k2 = mc.kappa1, mc.kappa2_sq
    hs = HorseshoeVBState.initial((d,), priors.b_phi)
    mask = np.ones(d, dtype=bool)
    mask[0] = False
    e_inv_sigma = 1.0 / max(np.mean(np.abs(y - np.quantile(y, q))), 1e-6)
    einvz = np.full(T, e_inv_sigma)
    mu = np.zeros(d)
    for it in range(max_iters):
        w = e_inv_sigma * einvz / k2
        lin = e_inv_sigma / k2 * (y * einvz - k1)
        prec = hs.precision(use_global=True)
        prec[0] = 1.0 / priors.intercept_var
        P = (X.T * w) @ X + np.diag(prec)
        Sig = np.linalg.inv(P)
        mu_new = Sig @ (X.T @ lin)
        hs = horseshoe_vb_update(mu_new ** 2 + np.diag(Sig), hs, mask=mask)
        resid = y - X @ mu_new
        M = np.maximum(resid ** 2 + np.einsum("td,de,te->t", X, Sig, X), FLOOR)
        ez, einvz = gig_moments(np.full(T, e_inv_sigma * (k1 ** 2 / k2 + 2.0)), e_inv_sigma * M / k2)
        rate = priors.s0 + np.sum(einvz * M / (2 * k2) - k1 * resid / k2 + (1 + k1 ** 2 / (2 * k2)) * ez)
        e_inv_sigma = (priors.r0 + 1.5 * T) / max(rate, FLOOR)
        change = np.max(np.abs(mu_new - mu) / (1.0 + np.abs(mu)))
        mu = mu_new
        if change < tol:
            return mu, True
    return mu, False


def _lags(x, p):
    """Rows ``t = p..T-1`` of ``[x_{t-1}, ..., x_{t-p}]``."""
    T = x.shape[0]
    return np.concatenate([x[p - i - 1:T - i - 1] for i in range(p)], axis=1)


@dataclass
class QARFit:
    """Fitted QAR/QAR-X models for every series of a panel.

    ``coef[s, r]`` is ``[c, own lags 1..p, global lags 1..p (k each)]``.
    ``g_var`` holds the intercept and lag matrices of the OLS VAR used to
    forecast the globals.
    """

    variant: str
    quantiles: tuple
    series_labels: list
    p: int
    coef: np.ndarray
    y_tail: np.ndarray
    g_tail: np.ndarray
    g_intercept: np.ndarray
    g_Phi: np.ndarray
    origin: str = ""
    converged: bool = True

    def global_forecast(self, H):
        k = self.g_tail.shape[1]
        hist = list(self.g_tail)
        out = np.empty((H, k))
        for h in range(H):
            g = self.g_intercept.copy()
            for lag in range(self.p):
                g += self.g_Phi[lag] @ hist[-1 - lag]
            out[h] = g
            hist.append(g)
        return out

    def forecast(self, H):
        """Iterated quantile forecasts ``(H, S, R)``; lags beyond the sample
        use the same quantile's earlier forecasts."""
        S, R, _ = self.coef.shape
        p = self.p
        k = self.g_tail.shape[1] if self.variant == "QAR-X" else 0
        g_hist = np.concatenate([self.g_tail, self.global_forecast(H)]) if k else None
        out = np.empty((H, S, R))
        for r in range(R):
            hist = [row.copy() for row in self.y_tail]
            for h in range(H):
                x = [np.ones(S)] + [hist[-1 - lag] for lag in range(p)]
                y = self.coef[:, r, 0].copy()
                for lag in range(p):
                    y += self.coef[:, r, 1 + lag] * x[1 + lag]
                if k:
                    base = 1 + p
                    for lag in range(p):
                        g = g_hist[p - 1 + h - lag]
                        y += self.coef[:, r, base + lag * k:base + (lag + 1) * k] @ g
                out[h, :, r] = y
                hist.append(y)
        return out


def _global_var(G, p, ridge=1e-6):
    T, k = G.shape
    if k == 0:
        return np.zeros(0), np.zeros((p, 0, 0))
    X = np.concatenate([np.ones((T - p, 1)), _lags(G, p)], axis=1)
    B = np.linalg.solve(X.T @ X + ridge * np.eye(X.shape[1]), X.T @ G[p:])
    Phi = np.stack([B[1 + lag * k:1 + (lag + 1) * k].T for lag in range(p)])
    return B[0], Phi


def fit_qar(panel, config):
    """Fit QAR (``config.variant == "QAR"``) or QAR-X to every series.

    Each series is estimated separately, so the model is univariate as the
    variant requires; looping over the panel is a convenience.
    """
    variant = config.variant
    if variant not in ("QAR", "QAR-X"):
        raise ValueError(f"fit_qar handles QAR and QAR-X, not {variant}")
    p = config.p
    Y, G = panel.values, panel.globals
    T, S = Y.shape
    if T <= p + 2:
        raise ValueError("sample too short for the lag order")
    if variant == "QAR-X" and G.shape[1] == 0:
        raise ValueError("QAR-X needs at least one global series")
    use_g = variant == "QAR-X"
    quantiles = tuple(config.quantiles)
    R = len(quantiles)
    k = G.shape[1] if use_g else 0
    d = 1 + p + p * k
    coef = np.empty((S, R, d))
    GX = _lags(G, p) if use_g else np.zeros((T - p, 0))
    ok = True
    for s in range(S):
        X = np.concatenate([np.ones((T - p, 1)), _lags(Y[:, [s]], p), GX], axis=1)
        for r, q in enumerate(quantiles):
            coef[s, r], conv = vb_quantile_regression(Y[p:, s], X, q, config.priors, config.vb.max_iters,
                                                      config.vb.tolerance)
            ok &= conv
    if not ok:
        log.warning("some quantile regressions stopped at the iteration cap")
    g_int, g_Phi = _global_var(G, p) if use_g else (np.zeros(0), np.zeros((p, 0, 0)))
    return QARFit(variant, quantiles, list(panel.column_labels), p, coef, Y[-p:].copy(),
                  G[-p:].copy() if use_g else np.zeros((p, 0)), g_int, g_Phi,
                  str(panel.time_index[-1].date()), bool(ok))
