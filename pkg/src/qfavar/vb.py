"""Two-step variational Bayes estimator.

Step 1 extracts, for each indicator and quantile level, a static quantile
factor from the ``n`` country series of that indicator.  Step 2 treats these
factors (plus the observed globals) as data and runs coordinate-ascent
updates for the measurement equations and the triangular VAR.

Both steps are deterministic: the factor initialisation is the first
principal component of the standardised block, and the updates use closed
forms only.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .distributions import gig_moments, mixture_constants
from .model import PosteriorDraws, block_data, layout_for, measurement_design, prepare_data
from .shrinkage import FLOOR, HorseshoeVBState, horseshoe_vb_update

log = logging.getLogger(__name__)

__all__ = [
    "VBQFAResult",
    "VariationalState",
    "vbqfa_extract",
    "extract_reference_factors",
    "vb_update_measurement",
    "vb_update_state",
    "run_vb",
]

_FACTOR_PRIOR_VAR = 1e4
_COEF_PRIOR_VAR = 100.0


@dataclass
class VBQFAResult:
    factor: np.ndarray
    factor_var: np.ndarray
    loadings: np.ndarray
    intercepts: np.ndarray
    converged: bool
    iterations: int


def _constants(q, gaussian):
    if gaussian:
        return 0.0, 1.0
    mc = mixture_constants(q)
    return mc.kappa1, mc.kappa2_sq


def _initial_factor(y, q, ref):
    sd = y.std(axis=0)
    sd[sd == 0] = 1.0
    ys = (y - y.mean(axis=0)) / sd
    u, s, _ = np.linalg.svd(ys, full_matrices=False)
    pc = u[:, 0] * s[0]
    X = np.column_stack([np.ones_like(pc), pc])
    coef = np.linalg.lstsq(X, y[:, ref], rcond=None)[0]
    f = X @ coef
    return f + np.quantile(y[:, ref] - f, q)


def vbqfa_extract(y_block, q, settings=None, ref=0, intercept=True, gaussian=False, r0=0.01, s0=0.01):
    """Static quantile factor of one indicator block.

    Parameters
    ----------
    y_block : ndarray (T, n)
        The country series of one indicator.
    q : float
        Quantile level.
    settings : VBSettings, optional
        ``step1_max_iters`` and ``step1_tolerance`` control the loop.
    ref : int
        Reference series; its loading is 1 and its intercept 0, so the factor
        is on the scale (and sign) of that series.
    gaussian : bool
        Gaussian errors (mean factor) instead of the asymmetric Laplace.

    Returns
    -------
    VBQFAResult
        ``converged`` is False when the iteration cap is reached; the last
        iterate is returned.
    """
    y = np.asarray(y_block, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    T, n = y.shape
    max_iters = getattr(settings, "step1_max_iters", 2000)
    tol = getattr(settings, "step1_tolerance", 1e-5)
    k1, k2 = _constants(q, gaussian)

    mf = _initial_factor(y, q, ref)
    vf = np.zeros(T)
    mu = np.zeros((n, 2))
    mu[:, 1] = 1.0
    Sig = np.zeros((n, 2, 2))
    free = np.ones(n, dtype=bool)
    free[ref] = False
    scale = np.maximum(np.abs(y - mf[:, None]).mean(axis=0), 1e-6)
    e_inv_sigma = 1.0 / scale
    ez = np.broadcast_to(scale, (T, n)).copy()
    einvz = 1.0 / ez
    prior_prec = np.diag([1.0 / _COEF_PRIOR_VAR if intercept else 1e8, 1.0 / _COEF_PRIOR_VAR])
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        f_old, mu_old = mf.copy(), mu.copy()
        Exx = np.empty((T, 2, 2))
        Exx[:, 0, 0] = 1.0
        Exx[:, 0, 1] = Exx[:, 1, 0] = mf
        Exx[:, 1, 1] = mf ** 2 + vf
        xbar = np.column_stack([np.ones(T), mf])
        if gaussian:
            w = np.broadcast_to(e_inv_sigma, (T, n))
            lin = y * e_inv_sigma
        else:
            w = e_inv_sigma * einvz / k2
            lin = e_inv_sigma / k2 * (y * einvz - k1)
        for j in np.flatnonzero(free):
            P = np.einsum("t,tab->ab", w[:, j], Exx) + prior_prec
            Sig[j] = np.linalg.inv(P)
            mu[j] = Sig[j] @ (xbar.T @ lin[:, j])
        Ephi2 = mu[:, :, None] * mu[:, None, :] + Sig
        M = (y ** 2 - 2.0 * y * (xbar @ mu.T) + np.einsum("tab,jab->tj", Exx, Ephi2))
        M = np.maximum(M, FLOOR)
        resid = y - xbar @ mu.T
        if gaussian:
            rate = s0 + 0.5 * M.sum(axis=0)
            e_inv_sigma = (r0 + 0.5 * T) / rate
        else:
            delta = np.broadcast_to(e_inv_sigma * (k1 ** 2 / k2 + 2.0), (T, n))
            ez, einvz = gig_moments(delta, e_inv_sigma * M / k2)
            rate = s0 + np.sum(einvz * M / (2 * k2) - k1 * resid / k2 + (1 + k1 ** 2 / (2 * k2)) * ez, axis=0)
            e_inv_sigma = (r0 + 1.5 * T) / np.maximum(rate, FLOOR)
            w = e_inv_sigma * einvz / k2
        # factor update given loadings
        Elam2 = mu[:, 1] ** 2 + Sig[:, 1, 1]
        Elamc = mu[:, 0] * mu[:, 1] + Sig[:, 0, 1]
        prec = 1.0 / _FACTOR_PRIOR_VAR + (w * Elam2).sum(axis=1)
        if gaussian:
            num = (e_inv_sigma * (mu[:, 1] * y - Elamc)).sum(axis=1)
        else:
            num = (e_inv_sigma / k2 * (mu[:, 1] * (y * einvz - k1) - Elamc * einvz)).sum(axis=1)
        mf = num / prec
        vf = 1.0 / prec
        change = max(np.max(np.abs(mf - f_old)) / (np.max(np.abs(f_old)) + 1e-8),
                     np.max(np.abs(mu - mu_old)) / (np.max(np.abs(mu_old)) + 1e-8))
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("quantile factor extraction did not converge in %d iterations (q=%g)", max_iters, q)
    return VBQFAResult(mf, vf, mu[:, 1].copy(), mu[:, 0].copy(), converged, it)


def extract_reference_factors(Y, layout, settings=None, priors=None):
    """Step-1 factors for every (quantile, indicator); returns ``(F, results)``.

    ``F`` is ``(T, m R)`` in the quantile-major factor order.
    """
    T = Y.shape[0]
    F = np.empty((T, layout.n_factors))
    results = []
    r0 = getattr(priors, "r0", 0.01)
    s0 = getattr(priors, "s0", 0.01)
    for r, q in enumerate(layout.quantiles):
        for i in range(layout.m):
            block = Y[:, i * layout.n:(i + 1) * layout.n]
            res = vbqfa_extract(block, q, settings, layout.ref_country, layout.include_intercepts,
                                layout.gaussian, r0, s0)
            F[:, r * layout.m + i] = res.factor
            results.append(res)
    return F, results


@dataclass
class VariationalState:
    """Variational factors of step 2.

    Measurement blocks: ``mu_phi`` (B, d), ``Sigma_phi`` (B, d, d), ``ez`` and
    ``einvz`` (B, T), ``e_inv_sigma`` (B,), ``sigma_shape``/``sigma_rate``
    (B,) and ``hs_meas``.  State rows: ``mu_psi`` (list of (K + r,) vectors),
    ``Sigma_psi`` (list), ``e_inv_omega`` (l,), ``omega_shape``/``omega_rate``
    and ``hs_state``.
    """

    mu_phi: np.ndarray
    Sigma_phi: np.ndarray
    ez: np.ndarray
    einvz: np.ndarray
    e_inv_sigma: np.ndarray
    sigma_shape: float
    sigma_rate: np.ndarray
    hs_meas: HorseshoeVBState
    mu_psi: list
    Sigma_psi: list
    e_inv_omega: np.ndarray
    omega_shape: float
    omega_rate: np.ndarray
    hs_state: HorseshoeVBState
    iteration: int = 0
    history: list = field(default_factory=list)

    def vector(self):
        """Parameters tracked by the convergence metric."""
        return np.concatenate([self.mu_phi.ravel(), self.e_inv_sigma, np.concatenate(self.mu_psi),
                               self.e_inv_omega])


def vb_update_measurement(yb, X, layout, state, priors, block_names=None):
    """One CAVI pass over every measurement block (coefficients, horseshoe, z, sigma).

    ``yb`` is ``(B, T)`` and ``X`` the ``(B, T, d)`` design with the step-1
    factors.  Returns a new :class:`VariationalState`.
    """
    B, T, d = X.shape
    free, fixed = layout.free_mask, layout.fixed_values
    k1, k2 = layout.kappas
    k1c, k2c = k1[:, None], k2[:, None]
    offset = np.einsum("btd,bd->bt", X, fixed)
    Xf = X * free[:, None, :]
    ytil = yb - offset
    es = state.e_inv_sigma[:, None]
    if layout.gaussian:
        w = np.broadcast_to(es, (B, T))
        lin = es * ytil
    else:
        w = es * state.einvz / k2c
        lin = es / k2c * (ytil * state.einvz - k1c)
    if priors.shrinkage == "horseshoe":
        prec = np.where(free, state.hs_meas.precision(use_global=True), 1.0)
    else:
        prec = np.full((B, d), 1.0 / priors.ridge_var)
        prec[:, 0] = 1.0 / priors.intercept_var
        prec = np.where(free, prec, 1.0)
    P = np.matmul(np.swapaxes(Xf, 1, 2) * w[:, None, :], Xf)
    P[:, np.arange(d), np.arange(d)] += prec
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        bad = [b for b in range(B) if np.any(np.linalg.eigvalsh(P[b]) <= 0)]
        names = [block_names[b] for b in bad] if block_names is not None else bad
        raise np.linalg.LinAlgError(f"measurement precision not positive definite for {names}") from None
    Sig = np.linalg.inv(P)
    Sig = Sig * free[:, :, None] * free[:, None, :]
    mu = np.einsum("bde,be->bd", Sig, np.einsum("btd,bt->bd", Xf, lin))
    mu = np.where(free, mu, fixed)

    hs = state.hs_meas
    if priors.shrinkage == "horseshoe":
        hs = horseshoe_vb_update(mu ** 2 + np.einsum("bdd->bd", Sig), hs, mask=free)

    resid = yb - np.einsum("btd,bd->bt", X, mu)
    M = np.maximum(resid ** 2 + np.einsum("btd,bde,bte->bt", X, Sig, X), FLOOR)
    if layout.gaussian:
        ez = einvz = np.ones((B, T))
        shape = priors.r0 + 0.5 * T
        rate = priors.s0 + 0.5 * M.sum(axis=1)
    else:
        delta = np.broadcast_to(es * (k1c ** 2 / k2c + 2.0), (B, T))
        ez, einvz = gig_moments(delta, es * M / k2c)
        shape = priors.r0 + 1.5 * T
        rate = priors.s0 + np.sum(einvz * M / (2 * k2c) - k1c * resid / k2c + (1 + k1c ** 2 / (2 * k2c)) * ez,
                                  axis=1)
    rate = np.maximum(rate, FLOOR)
    return _replace(state, mu_phi=mu, Sigma_phi=Sig, ez=ez, einvz=einvz, e_inv_sigma=shape / rate,
                    sigma_shape=shape, sigma_rate=rate, hs_meas=hs)


def _replace(state, **changes):
    new = VariationalState(**{**state.__dict__, **changes})
    return new


def _lagmat(S, p, intercept):
    T = S.shape[0]
    X = np.concatenate([S[p - i - 1:T - i - 1] for i in range(p)], axis=1)
    if intercept:
        X = np.concatenate([np.ones((T - p, 1)), X], axis=1)
    return S[p:], X


def vb_update_state(S, X, state, priors, intercept=True):
    """CAVI updates of the state equation rows given the step-1 states.

    ``S`` is ``(Te, l)`` and ``X`` the ``(Te, K)`` regressors.  Each row
    regresses on the lags and on the mean residuals of the previous rows.
    """
    Te, K = X.shape
    l = S.shape[1]
    i0 = int(intercept)
    mu_list, Sig_list = [], []
    shape = priors.r_h + 0.5 * Te
    rates = np.empty(l)
    e_inv_omega = state.e_inv_omega.copy()
    eps = np.empty((Te, l))
    for r in range(l):
        D = np.concatenate([X, eps[:, :r]], axis=1)
        prec = np.empty(K + r)
        if priors.shrinkage == "horseshoe":
            prec[i0:K] = state.hs_state.precision(use_global=False)[r]
        else:
            prec[i0:K] = 1.0 / priors.ridge_var_state
        if intercept:
            prec[0] = 1.0 / priors.intercept_var
        prec[K:] = 1.0 / priors.sigma_a
        mean0 = np.zeros(K + r)
        mean0[K:] = priors.mu_a
        # the variance factor is refreshed from the current coefficients first
        mu_prev = state.mu_psi[r]
        Sig_prev = state.Sigma_psi[r]
        resid = S[:, r] - D @ mu_prev
        quad = np.einsum("ti,ij,tj->t", D, Sig_prev, D)
        rates[r] = priors.s_h + 0.5 * np.sum(resid ** 2 + quad)
        e_inv_omega[r] = shape / max(rates[r], FLOOR)
        P = e_inv_omega[r] * D.T @ D + np.diag(prec)
        try:
            Sig = np.linalg.inv(P)
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"singular design for state row {r}") from None
        mu = Sig @ (e_inv_omega[r] * D.T @ S[:, r] + prec * mean0)
        mu_list.append(mu)
        Sig_list.append(Sig)
        eps[:, r] = S[:, r] - X @ mu[:K]
    hs = state.hs_state
    if priors.shrinkage == "horseshoe":
        e2 = np.stack([m[i0:K] ** 2 + np.diag(s)[i0:K] for m, s in zip(mu_list, Sig_list)])
        hs = horseshoe_vb_update(e2, hs)
    return _replace(state, mu_psi=mu_list, Sigma_psi=Sig_list, e_inv_omega=e_inv_omega,
                    omega_shape=shape, omega_rate=rates, hs_state=hs)


def _initial_variational_state(layout, yb, X, S, Xv, priors, intercept):
    B, T, d = X.shape
    l, K = S.shape[1], Xv.shape[1]
    scale = np.maximum(np.abs(yb - yb.mean(axis=1, keepdims=True)).mean(axis=1), 1e-6)
    mu_psi, Sig_psi = [], []
    coef = np.linalg.solve(Xv.T @ Xv + np.eye(K), Xv.T @ S)
    res = S - Xv @ coef
    for r in range(l):
        mu_psi.append(np.concatenate([coef[:, r], np.zeros(r)]))
        Sig_psi.append(np.zeros((K + r, K + r)))
    e_inv_omega = 1.0 / np.maximum(res.var(axis=0), 1e-8)
    return VariationalState(
        mu_phi=layout.fixed_values.copy(), Sigma_phi=np.zeros((B, d, d)),
        ez=np.broadcast_to(scale[:, None], (B, T)).copy(), einvz=np.broadcast_to(1 / scale[:, None], (B, T)).copy(),
        e_inv_sigma=1.0 / scale, sigma_shape=1.0, sigma_rate=scale,
        hs_meas=HorseshoeVBState.initial((B, d), priors.b_phi),
        mu_psi=mu_psi, Sigma_psi=Sig_psi, e_inv_omega=e_inv_omega, omega_shape=1.0,
        omega_rate=1.0 / e_inv_omega, hs_state=HorseshoeVBState.initial((l, K - int(intercept)), priors.b_psi))


def relative_change(new, old):
    return float(np.max(np.abs(new - old) / (1.0 + np.abs(old)))) if new.size else 0.0


def run_vb(panel, config, F_reference=None):
    """Two-step variational estimation; returns a one-draw :class:`PosteriorDraws`.

    Variances of the Gaussian factors are stored in ``variances`` and the
    convergence trace in ``diagnostics["trace"]``.
    """
    if config.variant in ("QAR", "QAR-X"):
        raise ValueError("QAR variants have no factors; use qfavar.qar.fit_qar")
    started = time.perf_counter()
    layout = layout_for(panel, config)
    Y, Ylag, G = prepare_data(panel, layout)
    T = Y.shape[0]
    if T <= layout.p + 1:
        raise ValueError(f"need more than p + 1 = {layout.p + 1} observations, got {T}")
    priors = config.priors
    intercept = config.include_intercepts
    step1 = None
    if F_reference is None:
        F_reference, step1 = extract_reference_factors(Y, layout, config.vb, priors)
    yb, ylagb = block_data(layout, Y, Ylag)
    X = measurement_design(layout, ylagb, F_reference, G)
    S, Xv = _lagmat(np.concatenate([F_reference, G], axis=1), layout.p, intercept)
    vs = _initial_variational_state(layout, yb, X, S, Xv, priors, intercept)
    names = [f"(q={layout.quantiles[r]:g}, {panel.indicator_labels[i]}, {panel.country_labels[j]})"
             for r, i, j in zip(layout.block_quantile, layout.block_indicator, layout.block_country)]
    converged = False
    trace = []
    for it in range(1, config.vb.max_iters + 1):
        old = vs.vector()
        vs = vb_update_measurement(yb, X, layout, vs, priors, names)
        vs = vb_update_state(S, Xv, vs, priors, intercept)
        metric = relative_change(vs.vector(), old)
        trace.append(metric)
        vs.iteration = it
        if metric < config.vb.tolerance:
            converged = True
            break
    if not converged:
        log.warning("variational updates stopped at max_iters=%d (last change %.3g)", config.vb.max_iters, trace[-1])
    vs.history = trace
    return _to_draws(vs, layout, panel, config, F_reference, Y, G, step1, converged, trace, started)


def _to_draws(vs, layout, panel, config, F, Y, G, step1, converged, trace, started):
    l, p = layout.l, layout.p
    K = int(config.include_intercepts) + l * p
    i0 = int(config.include_intercepts)
    psi = np.stack([m[:K] for m in vs.mu_psi])
    psi_var = np.stack([np.diag(s)[:K] for s in vs.Sigma_psi])
    a = np.zeros((l, l))
    for r in range(l):
        a[r, :r] = vs.mu_psi[r][K:]
    A = np.linalg.inv(np.eye(l) - a)
    omega_mean = vs.omega_rate / np.maximum(vs.omega_shape - 1.0, FLOOR)
    h = np.log(omega_mean)
    Phi = np.stack([psi[:, i0 + i * l:i0 + (i + 1) * l] for i in range(p)])
    Phi_var = np.stack([psi_var[:, i0 + i * l:i0 + (i + 1) * l] for i in range(p)])
    v = psi[:, 0] if i0 else np.zeros(l)
    phi_var = np.einsum("bdd->bd", vs.Sigma_phi)
    sigma_mean = vs.sigma_rate / np.maximum(vs.sigma_shape - 1.0, FLOOR)
    variances = {
        "c": phi_var[None, :, 0], "beta": phi_var[None, :, 1], "lam": phi_var[None, :, 2],
        "gamma": phi_var[None, :, 3:], "Phi": Phi_var[None], "v": (psi_var[:, 0] if i0 else np.zeros(l))[None],
        "sigma_shape": np.full((1, layout.n_blocks), vs.sigma_shape), "sigma_rate": vs.sigma_rate[None],
        "omega_shape": np.full((1, l), vs.omega_shape), "omega_rate": vs.omega_rate[None],
    }
    diagnostics = {
        "converged": bool(converged), "iterations": len(trace), "trace": [float(x) for x in trace],
        "runtime_seconds": time.perf_counter() - started,
    }
    if step1 is not None:
        diagnostics["step1_converged"] = [bool(r.converged) for r in step1]
        diagnostics["step1_iterations"] = [int(r.iterations) for r in step1]
    T = Y.shape[0]
    draws = PosteriorDraws(
        "vb", config.variant, layout,
        c=vs.mu_phi[None, :, 0].copy(), beta=vs.mu_phi[None, :, 1].copy(), lam=vs.mu_phi[None, :, 2].copy(),
        gamma=vs.mu_phi[None, :, 3:].copy(), sigma=sigma_mean[None], v=v[None], Phi=Phi[None], A=A[None],
        h_mean=h[None], h_last=h[None], F=F[None], Y=Y, G=G,
        time_index=[str(t.date()) for t in panel.time_index[-T:]],
        indicator_labels=list(panel.indicator_labels), country_labels=list(panel.country_labels),
        global_labels=list(panel.global_labels[:layout.k]), seed=config.vb.seed, config=config.to_dict(),
        variances=variances, diagnostics=diagnostics)
    draws.diagnostics["quantile_ordering_rate"] = draws.quantile_ordering_rate()
    return draws
