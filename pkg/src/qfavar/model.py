"""Model layout shared by the estimators and the posterior container.

Ordering conventions
--------------------
* Observed series ``y_t`` are indicator-major: index ``i * n + j``.
* Quantile factors are quantile-major: factor ``f^i(q_r)`` sits at
  ``r * m + i``.  The state is ``s_t = [F_t', g_t']'`` of length ``m R + k``.
* Measurement blocks ``(q_r, i, j)`` are indexed ``b = r * m n + i n + j``.
* Each block has the coefficient vector ``[c, beta, lambda, gamma_1..k]``.
* The first country of each indicator is the reference series: its loading is
  fixed to 1 and its intercept to 0.  By default its loadings on the globals
  are fixed to 0 as well; otherwise the factor is only identified up to
  adding a linear combination of ``g_t``.
"""

from dataclasses import dataclass, field

import numpy as np

from .distributions import mixture_constants
from .statespace import build_companion, spectral_radius

__all__ = ["ModelLayout", "PosteriorDraws", "layout_for", "prepare_data"]

COEF_NAMES = ("c", "beta", "lambda")


@dataclass(frozen=True)
class ModelLayout:
    m: int
    n: int
    k: int
    quantiles: tuple
    p: int
    include_intercepts: bool = True
    include_own_lag: bool = False
    gaussian: bool = False
    ref_country: int = 0
    fix_reference_globals: bool = True

    @property
    def R(self):
        return len(self.quantiles)

    @property
    def n_factors(self):
        return self.m * self.R

    @property
    def l(self):
        return self.m * self.R + self.k

    @property
    def n_series(self):
        return self.m * self.n

    @property
    def n_blocks(self):
        return self.m * self.n * self.R

    @property
    def n_coef(self):
        return 3 + self.k

    @property
    def block_quantile(self):
        return np.repeat(np.arange(self.R), self.m * self.n)

    @property
    def block_series(self):
        return np.tile(np.arange(self.m * self.n), self.R)

    @property
    def block_indicator(self):
        return self.block_series // self.n

    @property
    def block_country(self):
        return self.block_series % self.n

    @property
    def block_factor(self):
        return self.block_quantile * self.m + self.block_indicator

    @property
    def is_reference(self):
        return self.block_country == self.ref_country

    @property
    def free_mask(self):
        """``(B, d)`` mask of coefficients that are estimated."""
        mask = np.ones((self.n_blocks, self.n_coef), dtype=bool)
        ref = self.is_reference
        mask[:, 0] = self.include_intercepts & ~ref
        mask[:, 1] = self.include_own_lag
        mask[:, 2] = ~ref
        if self.fix_reference_globals:
            mask[:, 3:] = ~ref[:, None]
        return mask

    @property
    def fixed_values(self):
        vals = np.zeros((self.n_blocks, self.n_coef))
        vals[self.is_reference, 2] = 1.0
        return vals

    @property
    def kappas(self):
        """``(kappa1, kappa2^2)`` per block."""
        if self.gaussian:
            return np.zeros(self.n_blocks), np.ones(self.n_blocks)
        k1 = np.empty(self.R)
        k2 = np.empty(self.R)
        for r, q in enumerate(self.quantiles):
            mc = mixture_constants(q)
            k1[r], k2[r] = mc.kappa1, mc.kappa2_sq
        return k1[self.block_quantile], k2[self.block_quantile]

    def factor_labels(self, indicators):
        return [f"{indicators[i]}(q={q:g})" for q in self.quantiles for i in range(self.m)]

    def state_labels(self, indicators, globals_):
        return self.factor_labels(indicators) + list(globals_)


def layout_for(panel, config):
    """Layout implied by a panel and the (variant-adjusted) configuration."""
    k = 0 if config.variant == "QDFM" else panel.k
    quantiles = (0.5,) if config.variant == "FAVAR" else tuple(config.quantiles)
    return ModelLayout(panel.m, panel.n, k, quantiles, config.p, config.include_intercepts,
                       config.include_own_lag, config.variant == "FAVAR",
                       fix_reference_globals=config.fix_reference_globals)


def prepare_data(panel, layout):
    """Return ``(Y, Ylag, G)`` aligned for estimation.

    With an own-lag term the first period only serves as the lag of the second.
    """
    Y = panel.values
    G = panel.globals[:, :layout.k] if layout.k else np.zeros((panel.T, 0))
    if layout.include_own_lag:
        return Y[1:], Y[:-1], G[1:]
    return Y, np.zeros_like(Y), G


def block_data(layout, Y, Ylag):
    """Repeat every series once per quantile level: ``(B, T)`` targets and lags."""
    return Y[:, layout.block_series].T.copy(), Ylag[:, layout.block_series].T.copy()


def measurement_design(layout, ylag, F, G):
    """Stacked ``(B, T, d)`` regressors ``[1, y_{t-1}, f, g]`` for every block.

    ``ylag`` holds the ``(B, T)`` lagged series of each block.
    """
    B, T = layout.n_blocks, F.shape[0]
    X = np.empty((B, T, layout.n_coef))
    X[:, :, 0] = 1.0
    X[:, :, 1] = ylag
    X[:, :, 2] = F[:, layout.block_factor].T
    X[:, :, 3:] = G[None]
    return X


@dataclass
class PosteriorDraws:
    """Stored posterior draws (MCMC) or variational means and variances (VB).

    Arrays carry a leading draw axis of length ``n_draws`` (1 for VB):
    ``c, beta, lam, sigma`` are ``(D, B)``, ``gamma`` is ``(D, B, k)``,
    ``v`` is ``(D, l)``, ``Phi`` is ``(D, p, l, l)``, ``A`` is the unit
    lower-triangular impact matrix ``(D, l, l)`` with ``Omega = A H A'``,
    ``h_mean`` and ``h_last`` are ``(D, l)`` log-variances (time average and
    final period) and ``F`` is ``(D, T, mR)``.
    """

    method: str
    variant: str
    layout: ModelLayout
    c: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    Phi: np.ndarray
    A: np.ndarray
    h_mean: np.ndarray
    h_last: np.ndarray
    F: np.ndarray
    Y: np.ndarray
    G: np.ndarray
    time_index: list
    indicator_labels: list
    country_labels: list
    global_labels: list
    seed: int = 0
    config: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    ARRAYS = ("c", "beta", "lam", "gamma", "sigma", "v", "Phi", "A", "h_mean", "h_last", "F", "Y", "G")

    @property
    def n_draws(self):
        return self.lam.shape[0]

    @property
    def quantiles(self):
        return tuple(self.layout.quantiles)

    @property
    def state_labels(self):
        return self.layout.state_labels(self.indicator_labels, self.global_labels[:self.layout.k])

    @property
    def series_labels(self):
        return [f"{i}.{c}" for i in self.indicator_labels for c in self.country_labels]

    def omega(self, d, mode="mean"):
        h = self.h_mean[d] if mode == "mean" else self.h_last[d]
        A = self.A[d]
        return (A * np.exp(h)) @ A.T

    def omegas(self, mode="mean"):
        return np.stack([self.omega(d, mode) for d in range(self.n_draws)])

    def companion(self, d):
        return build_companion(self.v[d], self.Phi[d])

    def spectral_radii(self):
        return np.array([spectral_radius(self.companion(d).matrix) for d in range(self.n_draws)])

    def observation_matrix(self, d):
        """``(B, l)`` matrix ``[Lambda, Gamma]`` and ``(B,)`` intercepts of draw ``d``."""
        lay = self.layout
        M = np.zeros((lay.n_blocks, lay.l))
        M[np.arange(lay.n_blocks), lay.block_factor] = self.lam[d]
        M[:, lay.n_factors:] = self.gamma[d]
        return M, self.c[d]

    def state_path(self, d):
        """``(T, l)`` state path ``[F_t, g_t]`` of draw ``d``."""
        return np.concatenate([self.F[d], self.G], axis=1)

    def posterior_mean(self, name):
        return getattr(self, name).mean(axis=0)

    def quantile_ordering_rate(self):
        """Share of periods in which the factors of every indicator are ordered in q."""
        lay = self.layout
        if lay.R < 2:
            return 1.0
        Fm = self.F.mean(axis=0).reshape(-1, lay.R, lay.m)
        return float(np.mean(np.all(np.diff(Fm, axis=1) >= 0, axis=(1, 2))))
