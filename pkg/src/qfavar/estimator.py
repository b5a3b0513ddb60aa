"""Scikit-learn style front end."""

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .panel import ModelConfig, PanelData, panel_from_frame

__all__ = ["QFAVAR", "as_panel"]


def as_panel(X, globals_=None):
    """Accept a :class:`PanelData` or a wide DataFrame indexed by date."""
    if isinstance(X, PanelData):
        return X
    if isinstance(X, pd.DataFrame):
        df = X
        if not isinstance(df.index, pd.DatetimeIndex):
            if "date" in df.columns:
                df = df.set_index("date")
            else:
                raise ValueError("DataFrame input needs a DatetimeIndex or a 'date' column")
        return panel_from_frame(df, globals_)
    raise TypeError(f"expected PanelData or DataFrame, got {type(X).__name__}")


class QFAVAR(BaseEstimator):
    """Quantile factor-augmented VAR estimator.

    Parameters mirror :class:`qfavar.panel.ModelConfig`; ``random_state``
    seeds the sampler.  After :meth:`fit`, ``posterior_`` holds the draws (or
    the variational summary, or a :class:`qfavar.qar.QARFit` for the
    univariate variants) and ``factors_`` the posterior-mean factor paths.

    Examples
    --------
    >>> from qfavar import QFAVAR, simulate_qfavar
    >>> panel, _ = simulate_qfavar(dict(m=1, n=3, k=1, T=120, p=1), rng=0)
    >>> est = QFAVAR(p=1, method="vb").fit(panel)
    >>> est.predict(horizon=2).shape[0]
    18
    """

    def __init__(self, quantiles=(0.1, 0.5, 0.9), p=6, variant="QFAVAR", method="vb", include_intercepts=True,
                 include_own_lag=False, sv=False, fix_reference_globals=True, shrinkage="horseshoe",
                 horizon=24, n_iter=20000, burn_in=5000, thin=10, max_iter=500, tol=1e-6, random_state=0):
        self.quantiles = quantiles
        self.p = p
        self.variant = variant
        self.method = method
        self.include_intercepts = include_intercepts
        self.include_own_lag = include_own_lag
        self.sv = sv
        self.fix_reference_globals = fix_reference_globals
        self.shrinkage = shrinkage
        self.horizon = horizon
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _config(self):
        seed = int(self.random_state) if self.random_state is not None else 0
        return ModelConfig(
            quantiles=tuple(self.quantiles), p=self.p, variant=self.variant, method=self.method,
            include_intercepts=self.include_intercepts, include_own_lag=self.include_own_lag, sv=self.sv,
            fix_reference_globals=self.fix_reference_globals, horizon=self.horizon,
            priors=dict(shrinkage=self.shrinkage),
            mcmc=dict(iterations=self.n_iter, burn_in=self.burn_in, thin=self.thin, seed=seed),
            vb=dict(max_iters=self.max_iter, tolerance=self.tol, seed=seed))

    def fit(self, X, y=None, globals_=None):
        """Estimate the model on a panel (``y`` is ignored)."""
        from .forecast import fit_model

        panel = as_panel(X, globals_)
        config = self._config()
        self.config_ = config
        self.panel_ = panel
        self.posterior_ = fit_model(panel, config, self.variant)
        self.n_features_in_ = panel.values.shape[1] + panel.k
        if self.variant not in ("QAR", "QAR-X"):
            post = self.posterior_
            F = post.F.mean(axis=0)
            labels = post.layout.factor_labels(post.indicator_labels)
            self.factors_ = pd.DataFrame(F, index=pd.Index(post.time_index, name="date"), columns=labels)
        else:
            self.factors_ = None
        return self

    def _check_fitted(self):
        if not hasattr(self, "posterior_"):
            raise NotFittedError("call fit before using this estimator")

    def transform(self, X=None):
        """Posterior-mean factor paths of the fitted sample.

        ``X``, when given, must be the panel the model was fitted on.
        """
        self._check_fitted()
        if self.factors_ is None:
            raise ValueError(f"variant {self.variant} has no factors")
        if X is not None:
            panel = as_panel(X)
            if panel.values.shape != self.panel_.values.shape or not np.allclose(panel.values, self.panel_.values):
                raise ValueError("transform only returns the factors of the fitted panel")
        return self.factors_.copy()

    def predict(self, X=None, horizon=None, quantiles=None):
        """Tidy quantile forecasts (columns ``model, origin, horizon, variable, quantile, value``)."""
        from .forecast import forecast_fan

        self._check_fitted()
        H = self.horizon if horizon is None else horizon
        qs = quantiles
        if qs is None and self.variant == "FAVAR":
            qs = tuple(self.quantiles)
        return forecast_fan(self.posterior_, H, qs).to_frame()

    def irf(self, shock, horizon=None):
        from .structural import irf_from_draws

        self._check_fitted()
        return irf_from_draws(self.posterior_, shock, self.horizon if horizon is None else horizon,
                              self.config_.omega_mode)

    def fevd(self, horizon=None):
        from .structural import fevd_from_draws

        self._check_fitted()
        return fevd_from_draws(self.posterior_, self.horizon if horizon is None else horizon,
                               self.config_.omega_mode)
