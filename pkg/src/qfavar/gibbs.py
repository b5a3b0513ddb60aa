"""Gibbs sampler for the quantile factor-augmented VAR.

One sweep updates, in order,

1. every measurement block ``(q, i, j)``: coefficients, horseshoe scales,
   latent mixture scales ``z`` and the AL scale ``sigma``;
2. the factor paths, by forward filtering and backward sampling;
3. the VAR rows ``(psi_r, a_r)`` of the triangular state equation;
4. the state log-variances (constant, or a random walk under SV).

The state innovation covariance is ``Omega_t = A H_t A'`` with ``A`` unit
lower triangular.  Row ``r`` of the state equation is written as a regression
of ``s_{r,t}`` on the lags and on the reduced-form residuals of rows ``< r``
with coefficients ``a_r``; ``A`` is the inverse of ``I - [a]``.  Because the
residuals of row ``r`` also enter the equations of later rows, the conditional
of ``(psi_r, a_r)`` adds those rows as extra Gaussian pseudo-observations.
"""

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .distributions import gig_draw
from .model import PosteriorDraws, block_data, layout_for, measurement_design, prepare_data
from .shrinkage import HorseshoeState, horseshoe_gibbs_update, inverse_gamma
from .statespace import build_companion, gaussian_draws, simulation_smoother_arrays, spectral_radius
from .validation import check_random_state

log = logging.getLogger(__name__)

__all__ = [
    "MeasurementParams",
    "StateParams",
    "GibbsState",
    "sample_measurement_block",
    "sample_factors",
    "sample_volatility",
    "sample_var_block",
    "enforce_sign_identification",
    "effective_sample_size",
    "run_gibbs",
]

# Seven-component normal mixture approximation of log chi^2_1.
KSC_PROBS = np.array([0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750])
KSC_MEANS = np.array([-10.12999, -3.97281, -8.56686, 2.77786, 0.61942, 1.79518, -1.08819]) - 1.2704
KSC_VARS = np.array([5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261])
SV_OFFSET = 1e-4


class SamplerError(RuntimeError):
    """A Gibbs step failed; the message names the step and location."""


@dataclass
class MeasurementParams:
    """Batched measurement-equation parameters.

    ``phi`` is ``(B, d)`` with columns ``[c, beta, lambda, gamma]``,
    ``sigma`` is ``(B,)`` and ``z`` is ``(B, T)``.
    """

    phi: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    hs: HorseshoeState


@dataclass
class StateParams:
    """State-equation parameters.

    ``psi`` is ``(l, K)`` with an optional intercept in column 0 followed by
    the lag coefficients ``[Phi_1, ..., Phi_p]``; ``a`` is ``(l, l)`` strictly
    lower triangular; ``h`` is the ``(Te, l)`` log-variance path.
    """

    psi: np.ndarray
    a: np.ndarray
    h: np.ndarray
    sv_var: np.ndarray
    hs: HorseshoeState
    intercept: bool = True

    @property
    def l(self):
        return self.psi.shape[0]

    @property
    def p(self):
        return (self.psi.shape[1] - int(self.intercept)) // self.l

    @property
    def v(self):
        return self.psi[:, 0].copy() if self.intercept else np.zeros(self.l)

    @property
    def Phi(self):
        lags = self.psi[:, int(self.intercept):]
        return np.stack([lags[:, i * self.l:(i + 1) * self.l] for i in range(self.p)])

    @property
    def A(self):
        return np.linalg.inv(np.eye(self.l) - self.a)

    def omega_path(self):
        A = self.A
        H = np.exp(self.h)
        if np.all(H == H[0]):
            return np.broadcast_to((A * H[0]) @ A.T, (H.shape[0], self.l, self.l))
        return np.matmul(A[None] * H[:, None, :], A.T)

    def copy(self):
        return StateParams(self.psi.copy(), self.a.copy(), self.h.copy(), self.sv_var.copy(),
                           self.hs.copy(), self.intercept)


@dataclass
class GibbsState:
    meas: MeasurementParams
    state: StateParams
    path: np.ndarray  # (T, l*p) companion draws; row 0 holds the pre-sample lags


def _prior_precision(layout, priors, hs, free):
    if priors.shrinkage == "horseshoe":
        prec = 1.0 / hs.prior_variance()
    else:
        prec = np.full(free.shape, 1.0 / priors.ridge_var)
        prec[:, 0] = 1.0 / priors.intercept_var
    return np.where(free, prec, 1.0)


def _batched_gaussian_draw(P, rhs, rng, what):
    eps = rng.standard_normal(rhs.shape)
    draw, status = gaussian_draws(np.ascontiguousarray(P), np.ascontiguousarray(rhs), eps)
    if status >= 0:
        raise SamplerError(f"{what}: posterior precision is not positive definite for block {status}")
    return draw


def sample_measurement_block(y, X, kappa1, kappa2_sq, params, free, fixed, priors, rng,
                             gaussian=False, block_names=None):
    """One Gibbs pass over a batch of measurement equations.

    Parameters
    ----------
    y : ndarray (B, T)
        Observed series of each block.
    X : ndarray (B, T, d)
        Regressors ``[1, y_{t-1}, f_t, g_t]`` of each block.
    kappa1, kappa2_sq : ndarray (B,)
        Mixture constants of each block's quantile level.
    params : MeasurementParams
        Current values; a new object is returned.
    free, fixed : ndarray (B, d)
        Mask of estimated coefficients and values of the fixed ones.
    gaussian : bool
        Gaussian errors with variance ``sigma`` instead of the AL mixture.
    """
    rng = check_random_state(rng)
    B, T, d = X.shape
    sigma, z = params.sigma, params.z
    offset = np.matmul(X, fixed[:, :, None])[:, :, 0]
    Xf = X * free[:, None, :]
    if gaussian:
        w = np.broadcast_to((1.0 / sigma)[:, None], (B, T))
        ytil = y - offset
    else:
        w = 1.0 / (sigma[:, None] * kappa2_sq[:, None] * z)
        ytil = y - offset - kappa1[:, None] * z
    prec = _prior_precision(None, priors, params.hs, free)
    P = np.matmul(np.swapaxes(Xf, 1, 2) * w[:, None, :], Xf)
    P[:, np.arange(d), np.arange(d)] += prec
    rhs = np.matmul((w * ytil)[:, None, :], Xf)[:, 0, :]
    phi = np.where(free, _batched_gaussian_draw(P, rhs, rng, "measurement coefficients"), fixed)

    hs = params.hs
    if priors.shrinkage == "horseshoe":
        hs = horseshoe_gibbs_update(phi, hs, rng, mask=free)

    e = y - np.matmul(X, phi[:, :, None])[:, :, 0]
    if gaussian:
        z_new = z
        shape = priors.r0 + 0.5 * T
        rate = priors.s0 + 0.5 * np.sum(e ** 2, axis=1)
    else:
        delta = np.broadcast_to(((kappa1 ** 2 / kappa2_sq + 2.0) / sigma)[:, None], (B, T))
        rho = np.maximum(e ** 2 / (sigma[:, None] * kappa2_sq[:, None]), 1e-12)
        if not np.all(np.isfinite(rho)):
            b, t = np.argwhere(~np.isfinite(rho))[0]
            name = block_names[b] if block_names is not None else b
            raise SamplerError(f"latent scale parameters are not finite for block {name}, t={t}")
        z_new = np.maximum(gig_draw(delta, rho, rng), 1e-12)
        shape = priors.r0 + 1.5 * T
        rate = (priors.s0 + z_new.sum(axis=1)
                + np.sum((e - kappa1[:, None] * z_new) ** 2 / (2.0 * z_new * kappa2_sq[:, None]), axis=1))
    sigma_new = inverse_gamma(shape, rate, rng)
    return MeasurementParams(phi, sigma_new, z_new, hs)


def _pseudo_observations(layout, yb, ylagb, G, meas):
    """Collapse the measurement equations of each factor into one Gaussian observation."""
    k1, k2 = layout.kappas
    phi = meas.phi
    ytil = yb - phi[:, [0]] - phi[:, [1]] * ylagb - phi[:, 3:] @ G.T
    if layout.gaussian:
        dvar = np.broadcast_to(meas.sigma[:, None], ytil.shape)
    else:
        ytil = ytil - k1[:, None] * meas.z
        dvar = meas.sigma[:, None] * k2[:, None] * meas.z
    lam = phi[:, 2][:, None]
    shape = (layout.R, layout.m, layout.n, -1)
    prec = (lam ** 2 / dvar).reshape(shape).sum(axis=2).reshape(layout.n_factors, -1)
    num = (lam * ytil / dvar).reshape(shape).sum(axis=2).reshape(layout.n_factors, -1)
    return (num / prec).T, (1.0 / prec).T


def sample_factors(layout, yb, ylagb, G, meas, state, rng, init_var=10.0):
    """Draw the companion state path ``[F_t, g_t, lags]`` given all parameters.

    ``yb`` and ``ylagb`` are the ``(B, T)`` block observations and lags.
    Returns the ``(T, l p)`` companion draws; the global block equals ``G``
    exactly and row 0 contains the drawn pre-sample lags.
    """
    T = yb.shape[1]
    l, p = layout.l, layout.p
    L = l * p
    pseudo, pvar = _pseudo_observations(layout, yb, ylagb, G, meas)
    obs = np.concatenate([pseudo, G], axis=1)
    H = np.concatenate([pvar, np.zeros((T, layout.k))], axis=1)
    Z = np.zeros((l, L))
    Z[:, :l] = np.eye(l)
    comp = build_companion(state.v, state.Phi)
    Q = np.zeros((T, L, L))
    Q[1:, :l, :l] = state.omega_path()
    eps = rng.standard_normal((T, L))
    X = simulation_smoother_arrays(obs, Z, np.zeros(l), H, comp.intercept, comp.matrix, Q,
                                   np.zeros(L), init_var * np.eye(L), l, eps)
    for lag in range(p):
        cols = slice(lag * l + layout.n_factors, (lag + 1) * l)
        X[lag:, cols] = G[:T - lag]
    return X


def var_regression_data(path, layout, intercept):
    """Targets and regressors of the state VAR from a companion path (periods 2..T)."""
    S = path[1:, :layout.l]
    lags = path[:-1]
    if intercept:
        lags = np.concatenate([np.ones((lags.shape[0], 1)), lags], axis=1)
    return S, lags


def _state_prior(psi_shape, state, priors, intercept):
    l, K = psi_shape
    prec = np.empty((l, K))
    lag = slice(int(intercept), K)
    if priors.shrinkage == "horseshoe":
        prec[:, lag] = 1.0 / state.hs.prior_variance()
    else:
        prec[:, lag] = 1.0 / priors.ridge_var_state
    if intercept:
        prec[:, 0] = 1.0 / priors.intercept_var
    return prec


def sample_var_block(S, X, r, state, priors, rng, prior_prec=None):
    """Draw ``(psi_r, a_r)`` jointly for state row ``r``.

    Parameters
    ----------
    S : ndarray (Te, l)
        State values of the estimation periods.
    X : ndarray (Te, K)
        Regressors: optional intercept and the lags of the state.
    state : StateParams
        Current values (not modified).

    prior_prec : ndarray (l, K), optional
        Prior precisions of the lag coefficients, computed from ``state``
        when omitted.

    Returns
    -------
    psi_r : ndarray (K,)
    a_r : ndarray (r,)
        Empty for the first row.
    """
    rng = check_random_state(rng)
    if prior_prec is None:
        prior_prec = _state_prior(state.psi.shape, state, priors, state.intercept)
    Te, K = X.shape
    l = S.shape[1]
    eps = S - X @ state.psi.T
    W = np.exp(-state.h)
    D = np.concatenate([X, eps[:, :r]], axis=1)
    P = D.T @ (W[:, [r]] * D)
    rhs = D.T @ (W[:, r] * S[:, r])
    if r + 1 < l:
        later = np.arange(r + 1, l)
        b = state.a[later, r]
        eta = eps[:, later] - eps @ state.a[later].T
        resid = eta + b * eps[:, [r]] - b * S[:, [r]]
        wsum = (W[:, later] * b ** 2).sum(axis=1)
        P[:K, :K] += X.T @ (wsum[:, None] * X)
        rhs[:K] += X.T @ (-(W[:, later] * b * resid).sum(axis=1))
    prec = np.concatenate([prior_prec[r],
                           np.full(r, 1.0 / priors.sigma_a)])
    P[np.arange(K + r), np.arange(K + r)] += prec
    rhs[K:] += priors.mu_a / priors.sigma_a
    try:
        draw = _batched_gaussian_draw(P[None], rhs[None], rng, f"state row {r}")[0]
    except SamplerError as exc:
        raise SamplerError(f"singular posterior precision for state row {r}") from exc
    return draw[:K], draw[K:]


@njit(cache=True)
def _tridiag_draw(diag, off, b, eps):
    """Draw from N(K^{-1} b, K^{-1}) for a symmetric tridiagonal precision K."""
    n = diag.size
    c = np.empty(n)
    e = np.empty(n)
    c[0] = np.sqrt(diag[0])
    for t in range(1, n):
        e[t] = off[t - 1] / c[t - 1]
        c[t] = np.sqrt(diag[t] - e[t] ** 2)
    # K = U'U with U upper bidiagonal (c on the diagonal, e above it)
    w = np.empty(n)
    w[0] = b[0] / c[0]
    for t in range(1, n):
        w[t] = (b[t] - e[t] * w[t - 1]) / c[t]
    x = np.empty(n)
    x[n - 1] = (w[n - 1] + eps[n - 1]) / c[n - 1]
    for t in range(n - 2, -1, -1):
        x[t] = (w[t] + eps[t] - e[t + 1] * x[t + 1]) / c[t]
    return x


def _sv_row(eta, h, sv_var, priors, rng):
    ystar = np.log(eta ** 2 + SV_OFFSET)
    resid = ystar[:, None] - h[:, None] - KSC_MEANS
    logp = np.log(KSC_PROBS) - 0.5 * np.log(KSC_VARS) - 0.5 * resid ** 2 / KSC_VARS
    prob = np.exp(logp - logp.max(axis=1, keepdims=True))
    cum = np.cumsum(prob, axis=1)
    u = rng.random(eta.size) * cum[:, -1]
    s = np.minimum((cum < u[:, None]).sum(axis=1), 6)
    Te = eta.size
    diag = 1.0 / KSC_VARS[s] + 2.0 / sv_var
    diag[-1] -= 1.0 / sv_var
    diag[0] += 1.0 / priors.sv_init_var - 1.0 / sv_var
    off = np.full(Te - 1, -1.0 / sv_var)
    b = (ystar - KSC_MEANS[s]) / KSC_VARS[s]
    h_new = _tridiag_draw(diag, off, b, rng.standard_normal(Te))
    dh = np.diff(h_new)
    sv_new = inverse_gamma(priors.r_omega + 0.5 * (Te - 1), priors.s_omega + 0.5 * np.sum(dh ** 2), rng)
    return h_new, float(sv_new)


def sample_volatility(eta, state, sv, priors, rng):
    """Update the log-variance paths given the structural residuals ``eta`` (Te, l).

    Without SV each row has a constant variance with an inverse-gamma
    conditional.  With SV each row follows a random walk sampled through the
    seven-component mixture approximation of ``log chi^2_1``.
    """
    rng = check_random_state(rng)
    Te, l = eta.shape
    if not sv:
        w = inverse_gamma(priors.r_h + 0.5 * Te, priors.s_h + 0.5 * np.sum(eta ** 2, axis=0), rng)
        return np.broadcast_to(np.log(w), (Te, l)).copy(), state.sv_var.copy()
    h = np.empty((Te, l))
    sv_var = np.empty(l)
    for r in range(l):
        h[:, r], sv_var[r] = _sv_row(eta[:, r], state.h[:, r], state.sv_var[r], priors, rng)
    return h, sv_var


def structural_residuals(S, X, state):
    eps = S - X @ state.psi.T
    return eps - eps @ state.a.T


def sample_state(S, X, state, priors, sv, rng):
    """Draw every VAR row, the horseshoe scales of the lag coefficients and the volatilities."""
    new = state.copy()
    l = S.shape[1]
    intercept = int(state.intercept)
    prior_prec = _state_prior(new.psi.shape, new, priors, new.intercept)
    for r in range(l):
        psi_r, a_r = sample_var_block(S, X, r, new, priors, rng, prior_prec)
        new.psi[r] = psi_r
        new.a[r, :r] = a_r
    if priors.shrinkage == "horseshoe":
        new.hs = horseshoe_gibbs_update(new.psi[:, intercept:], new.hs, rng)
    new.h, new.sv_var = sample_volatility(structural_residuals(S, X, new), new, sv, priors, rng)
    return new


def enforce_sign_identification(F_draw, F_reference, loadings=None, block_factor=None, var=None):
    """Flip factors that are negatively correlated with their reference.

    Parameters
    ----------
    F_draw, F_reference : ndarray (T, nf)
    loadings : ndarray (B,), optional
        Loadings of the measurement blocks; ``block_factor`` maps each block
        to its factor.  Flipped factors have their loadings negated.
    var : dict, optional
        ``{"v": (l,), "Phi": (p, l, l), "A": (l, l)}``; rows and columns of
        flipped factors are negated (``S Phi S``, ``S v``, ``S A S``).

    Returns
    -------
    F, signs, loadings, var
        ``signs`` is +1/-1 per factor.  Factors with zero variance are left
        unchanged with a warning.
    """
    F = np.asarray(F_draw, dtype=float)
    ref = np.asarray(F_reference, dtype=float)
    if F.shape != ref.shape:
        raise ValueError(f"factor draw {F.shape} and reference {ref.shape} differ in shape")
    Fc = F - F.mean(axis=0)
    Rc = ref - ref.mean(axis=0)
    cov = np.sum(Fc * Rc, axis=0)
    degenerate = (np.sum(Fc ** 2, axis=0) == 0) | (np.sum(Rc ** 2, axis=0) == 0)
    if np.any(degenerate):
        log.warning("sign check skipped for zero-variance factor(s) %s", np.flatnonzero(degenerate).tolist())
    signs = np.where((cov < 0) & ~degenerate, -1.0, 1.0)
    F = F * signs
    if loadings is not None:
        loadings = np.asarray(loadings, dtype=float) * signs[np.asarray(block_factor)]
    if var is not None:
        l = var["A"].shape[0]
        s = np.ones(l)
        s[:signs.size] = signs
        var = {"v": var["v"] * s, "Phi": var["Phi"] * s[:, None] * s[None, :],
               "A": var["A"] * s[:, None] * s[None, :]}
    return F, signs, loadings, var


def effective_sample_size(draws):
    """Effective sample size of each column using the initial monotone sequence.

    ``draws`` has the chain along axis 0; any trailing shape is allowed.
    """
    x = np.asarray(draws, dtype=float)
    n = x.shape[0]
    flat = x.reshape(n, -1)
    out = np.empty(flat.shape[1])
    if n < 4:
        out[:] = n
        return out.reshape(x.shape[1:])
    xc = flat - flat.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=0)[:n] / n
    for j in range(flat.shape[1]):
        g0 = acov[0, j]
        if g0 <= 0:
            out[j] = n
            continue
        rho = acov[:, j] / g0
        pairs = rho[0:n - 1:2] + rho[1:n:2]
        m = np.argmax(pairs <= 0) if np.any(pairs <= 0) else pairs.size
        pairs = np.minimum.accumulate(pairs[:m]) if m else pairs[:0]
        tau = -1.0 + 2.0 * pairs.sum()
        out[j] = n / max(tau, 1.0 / n)
    return out.reshape(x.shape[1:])


def _lagmat(S, p, intercept):
    T = S.shape[0]
    cols = [S[p - i - 1:T - i - 1] for i in range(p)]
    X = np.concatenate(cols, axis=1)
    if intercept:
        X = np.concatenate([np.ones((T - p, 1)), X], axis=1)
    return S[p:], X


def initial_state(layout, F, G, priors, intercept):
    """Ridge VAR estimates on a provisional factor path."""
    S_full = np.concatenate([F, G], axis=1)
    p, l = layout.p, layout.l
    S, X = _lagmat(S_full, p, intercept)
    K = X.shape[1]
    pen = np.full(K, 1.0)
    if intercept:
        pen[0] = 1e-6
    psi = np.linalg.solve(X.T @ X + np.diag(pen), X.T @ S).T
    resid = S - X @ psi.T
    h0 = np.log(np.maximum(resid.var(axis=0), 1e-6))
    Te = F.shape[0] - 1
    hs = HorseshoeState.initial((l, l * p))
    return StateParams(psi, np.zeros((l, l)), np.broadcast_to(h0, (Te, l)).copy(),
                       np.full(l, 0.1), hs, intercept)


def _block_names(layout, panel):
    return [f"({panel.indicator_labels[i]}, {panel.country_labels[j]}, q={layout.quantiles[r]:g})"
            for r, i, j in zip(layout.block_quantile, layout.block_indicator, layout.block_country)]


def gibbs_sweep(gs, layout, data, priors, rng, sv=False, init_var=10.0, block_names=None):
    """One full sweep; returns a new :class:`GibbsState`."""
    yb, ylagb, G = data
    k1, k2 = layout.kappas
    X = measurement_design(layout, ylagb, gs.path[:, :layout.n_factors], G)
    meas = sample_measurement_block(yb, X, k1, k2, gs.meas, layout.free_mask, layout.fixed_values,
                                    priors, rng, layout.gaussian, block_names)
    path = sample_factors(layout, yb, ylagb, G, meas, gs.state, rng, init_var)
    S, Xv = var_regression_data(path, layout, gs.state.intercept)
    state = sample_state(S, Xv, gs.state, priors, sv, rng)
    return GibbsState(meas, state, path)


def initial_gibbs_state(layout, data, F_ref, priors, rng, intercept=True):
    yb, ylagb, G = data
    T = yb.shape[1]
    B, d = layout.n_blocks, layout.n_coef
    state = initial_state(layout, F_ref, G, priors, intercept)
    path = np.zeros((T, layout.l * layout.p))
    S_full = np.concatenate([F_ref, G], axis=1)
    for lag in range(layout.p):
        path[lag:, lag * layout.l:(lag + 1) * layout.l] = S_full[:T - lag]
    resid_scale = np.maximum(np.std(yb, axis=1) * 0.1, 1e-3)
    meas = MeasurementParams(layout.fixed_values.copy(), resid_scale,
                             np.broadcast_to(resid_scale[:, None], (B, T)).copy(),
                             HorseshoeState.initial((B, d)))
    k1, k2 = layout.kappas
    X = measurement_design(layout, ylagb, F_ref, G)
    meas = sample_measurement_block(yb, X, k1, k2, meas, layout.free_mask,
                                    layout.fixed_values, priors, rng, layout.gaussian)
    return GibbsState(meas, state, path)


def run_gibbs(panel, config, F_reference=None, progress=None):
    """Estimate the model by MCMC and return thinned :class:`PosteriorDraws`.

    Parameters
    ----------
    panel : PanelData
    config : ModelConfig
    F_reference : ndarray (T, mR), optional
        Reference factors for initialisation and the sign check; computed
        with :func:`qfavar.vb.extract_reference_factors` when omitted.
    progress : callable, optional
        Called as ``progress(iteration)`` every 1000 sweeps.
    """
    from .vb import extract_reference_factors

    if config.variant in ("QAR", "QAR-X"):
        raise ValueError("QAR variants have no factors; use qfavar.qar.fit_qar")
    started = time.perf_counter()
    layout = layout_for(panel, config)
    Y, Ylag, G = prepare_data(panel, layout)
    data = (*block_data(layout, Y, Ylag), G)
    T = Y.shape[0]
    if T <= layout.p + 1:
        raise ValueError(f"need more than p + 1 = {layout.p + 1} observations, got {T}")
    priors = config.priors
    mc = config.mcmc
    ss = np.random.SeedSequence(mc.seed)
    rng = np.random.default_rng(ss)
    if F_reference is None:
        F_reference = extract_reference_factors(Y, layout, config.vb)[0]
    names = _block_names(layout, panel)
    intercept = config.include_intercepts
    gs = initial_gibbs_state(layout, data, F_reference, priors, rng, intercept)

    D = config.n_draws
    B, l, p, nf = layout.n_blocks, layout.l, layout.p, layout.n_factors
    store = {
        "c": np.empty((D, B)), "beta": np.empty((D, B)), "lam": np.empty((D, B)),
        "gamma": np.empty((D, B, layout.k)), "sigma": np.empty((D, B)),
        "v": np.empty((D, l)), "Phi": np.empty((D, p, l, l)), "A": np.empty((D, l, l)),
        "h_mean": np.empty((D, l)), "h_last": np.empty((D, l)), "F": np.empty((D, T, nf)),
    }
    sign_conflicts = 0
    nonstationary = 0
    d = 0
    for it in range(mc.iterations):
        try:
            gs = gibbs_sweep(gs, layout, data, priors, rng, config.sv, priors.init_var, names)
        except (SamplerError, np.linalg.LinAlgError, ValueError) as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc
        F = gs.path[:, :nf]
        if config.identify_sign:
            # every factor has a unit reference loading, so a negative
            # correlation cannot be removed by a flip; it is only counted
            _, signs, _, _ = enforce_sign_identification(F, F_reference)
            sign_conflicts += int(np.sum(signs < 0))
        if it >= mc.burn_in and (it - mc.burn_in + 1) % mc.thin == 0 and d < D:
            st = gs.state
            if not (np.all(np.isfinite(gs.meas.phi)) and np.all(np.isfinite(st.psi))
                    and np.all(np.isfinite(F))):
                raise SamplerError(f"iteration {it}: non-finite draw")
            store["c"][d] = gs.meas.phi[:, 0]
            store["beta"][d] = gs.meas.phi[:, 1]
            store["lam"][d] = gs.meas.phi[:, 2]
            store["gamma"][d] = gs.meas.phi[:, 3:]
            store["sigma"][d] = gs.meas.sigma
            store["v"][d] = st.v
            store["Phi"][d] = st.Phi
            store["A"][d] = st.A
            store["h_mean"][d] = st.h.mean(axis=0)
            store["h_last"][d] = st.h[-1]
            store["F"][d] = F
            comp = build_companion(st.v, st.Phi)
            nonstationary += int(spectral_radius(comp.matrix) >= 1.0)
            d += 1
        if progress is not None and (it + 1) % 1000 == 0:
            progress(it + 1)

    ess = {name: float(np.median(effective_sample_size(store[name]))) if D > 3 else float(D)
           for name in ("lam", "sigma", "Phi", "F")}
    diagnostics = {
        "ess_median": ess,
        "sign_conflicts": sign_conflicts,
        "nonstationary_draws": nonstationary,
        "runtime_seconds": time.perf_counter() - started,
        "iterations": mc.iterations,
    }
    draws = PosteriorDraws(
        "mcmc", config.variant, layout, Y=Y, G=G,
        time_index=[str(t.date()) for t in panel.time_index[-T:]],
        indicator_labels=list(panel.indicator_labels), country_labels=list(panel.country_labels),
        global_labels=list(panel.global_labels[:layout.k]), seed=mc.seed,
        config=config.to_dict(), diagnostics=diagnostics, **store)
    draws.diagnostics["quantile_ordering_rate"] = draws.quantile_ordering_rate()
    return draws


def draw_from_prior(layout, priors, T, rng, intercept=True):
    """Draw parameters from the (finite-moment) prior; used for joint-distribution tests."""
    B, d, l, p = layout.n_blocks, layout.n_coef, layout.l, layout.p
    free, fixed = layout.free_mask, layout.fixed_values
    if priors.shrinkage != "ridge":
        raise ValueError("prior simulation requires shrinkage='ridge'")
    sd = np.full((B, d), np.sqrt(priors.ridge_var))
    sd[:, 0] = np.sqrt(priors.intercept_var)
    phi = np.where(free, sd * rng.standard_normal((B, d)), fixed)
    sigma = inverse_gamma(priors.r0, np.full(B, priors.s0), rng)
    z = rng.exponential(1.0, (B, T)) * sigma[:, None]
    K = int(intercept) + l * p
    psi_sd = np.full((l, K), np.sqrt(priors.ridge_var_state))
    if intercept:
        psi_sd[:, 0] = np.sqrt(priors.intercept_var)
    psi = psi_sd * rng.standard_normal((l, K))
    a = np.tril(priors.mu_a + np.sqrt(priors.sigma_a) * rng.standard_normal((l, l)), -1)
    w = inverse_gamma(priors.r_h, np.full(l, priors.s_h), rng)
    h = np.broadcast_to(np.log(w), (T - 1, l)).copy()
    meas = MeasurementParams(phi, sigma, z, HorseshoeState.initial((B, d)))
    state = StateParams(psi, a, h, np.full(l, 0.1), HorseshoeState.initial((l, l * p)), intercept)
    return meas, state


def simulate_from_params(layout, meas, state, T, rng, init_var=10.0):
    """Draw ``(Y, G, path)`` from the model given parameters; ``z`` is redrawn from its prior."""
    l, p = layout.l, layout.p
    L = l * p
    comp = build_companion(state.v, state.Phi)
    omegas = state.omega_path()
    path = np.empty((T, L))
    path[0] = np.sqrt(init_var) * rng.standard_normal(L)
    for t in range(1, T):
        shock = np.linalg.cholesky(omegas[t - 1]) @ rng.standard_normal(l)
        path[t] = comp.intercept + comp.matrix @ path[t - 1]
        path[t, :l] += shock
    F = path[:, :layout.n_factors]
    G = path[:, layout.n_factors:l]
    k1, k2 = layout.kappas
    B = layout.n_blocks
    z = rng.exponential(1.0, (B, T)) * meas.sigma[:, None]
    X = measurement_design(layout, np.zeros((B, T)), F, G)
    mean = np.matmul(X, meas.phi[:, :, None])[:, :, 0]
    if layout.gaussian:
        yb = mean + np.sqrt(meas.sigma)[:, None] * rng.standard_normal((B, T))
        z = np.ones((B, T))
    else:
        yb = mean + k1[:, None] * z + np.sqrt(k2[:, None] * meas.sigma[:, None] * z) * rng.standard_normal((B, T))
    return yb, G, path, z
