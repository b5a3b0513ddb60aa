"""Linear-Gaussian state-space utilities.

The state follows a VAR(p) ``s_t = v + Phi_1 s_{t-1} + ... + Phi_p s_{t-p} + e_t``
with ``e_t ~ N(0, Omega_t)``, and is filtered in companion form
``x_t = [s_t', s_{t-1}', ..., s_{t-p+1}']'``.  Observations are
``y_t = d + Z s_t + u_t`` with a diagonal (possibly zero) noise variance.

Observations are processed one scalar at a time, so zero-variance rows are
conditioned on exactly instead of being jittered.  The initial companion state
``x_1`` has a Gaussian prior, ``N(0, 10 I)`` unless set otherwise; the lag
blocks of ``x_1`` are pre-sample values and are drawn by the smoother like any
other latent quantity.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .validation import check_random_state, check_square

__all__ = [
    "StateSpaceSystem",
    "CompanionSystem",
    "FilterResult",
    "build_companion",
    "spectral_radius",
    "kalman_filter",
    "carter_kohn_draw",
]

_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class CompanionSystem:
    """VAR(p) written as a VAR(1) in the stacked state."""

    matrix: np.ndarray
    intercept: np.ndarray
    selection: np.ndarray
    n_states: int
    n_lags: int

    @property
    def spectral_radius(self):
        return spectral_radius(self.matrix)


def build_companion(v, coeffs):
    """Stack intercept ``v`` and lag matrices ``coeffs`` into companion form.

    >>> build_companion([0.0], [[[0.5]], [[0.3]]]).matrix
    array([[0.5, 0.3],
           [1. , 0. ]])
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim == 2:
        coeffs = coeffs[None]
    if coeffs.ndim != 3 or coeffs.shape[1] != coeffs.shape[2]:
        raise ValueError(f"lag matrices must be square and of equal size, got {coeffs.shape}")
    p, l, _ = coeffs.shape
    v = np.zeros(l) if v is None else np.asarray(v, dtype=float).ravel()
    if v.size != l:
        raise ValueError(f"intercept has length {v.size}, expected {l}")
    L = l * p
    comp = np.zeros((L, L))
    comp[:l, :] = np.concatenate(list(coeffs), axis=1)
    if p > 1:
        comp[l:, :-l] = np.eye(L - l)
    c = np.zeros(L)
    c[:l] = v
    sel = np.zeros((L, l))
    sel[:l] = np.eye(l)
    return CompanionSystem(comp, c, sel, l, p)


def spectral_radius(matrix):
    """Largest eigenvalue modulus of a square matrix."""
    a = check_square(matrix, "matrix")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


@dataclass
class StateSpaceSystem:
    """Observation and transition description of a linear-Gaussian model.

    Attributes
    ----------
    loadings : (N, l) observation matrix acting on the current state block
    obs_intercept : (N,)
    obs_noise_var : (N,) or (T, N) diagonal noise variances (zeros allowed)
    trans_intercept : (l,)
    trans_coeffs : (p, l, l) lag matrices
    trans_cov : (l, l) or (T, l, l) innovation covariance; entry ``t`` is the
        covariance of the shock that moves the state into period ``t``
    init_mean, init_cov : prior of the companion state at the first period
    """

    loadings: np.ndarray
    obs_intercept: np.ndarray
    obs_noise_var: np.ndarray
    trans_intercept: np.ndarray
    trans_coeffs: np.ndarray
    trans_cov: np.ndarray
    init_mean: np.ndarray = None
    init_cov: np.ndarray = None
    init_var: float = 10.0

    def __post_init__(self):
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        N, l = self.loadings.shape
        coeffs = np.asarray(self.trans_coeffs, dtype=float)
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        if coeffs.shape[1:] != (l, l):
            raise ValueError(f"trans_coeffs must be (p, {l}, {l}), got {coeffs.shape}")
        self.trans_coeffs = coeffs
        self.obs_intercept = (np.zeros(N) if self.obs_intercept is None
                              else np.asarray(self.obs_intercept, dtype=float).ravel())
        self.trans_intercept = (np.zeros(l) if self.trans_intercept is None
                                else np.asarray(self.trans_intercept, dtype=float).ravel())
        if self.obs_intercept.size != N or self.trans_intercept.size != l:
            raise ValueError("intercept dimensions do not match the loadings")
        self.obs_noise_var = np.asarray(self.obs_noise_var, dtype=float)
        if np.any(self.obs_noise_var < 0):
            raise ValueError("observation noise variances must be nonnegative")
        self.trans_cov = np.asarray(self.trans_cov, dtype=float)
        L = l * coeffs.shape[0]
        if self.init_mean is None:
            self.init_mean = np.zeros(L)
        if self.init_cov is None:
            self.init_cov = self.init_var * np.eye(L)
        self.init_mean = np.asarray(self.init_mean, dtype=float)
        self.init_cov = np.asarray(self.init_cov, dtype=float)

    @property
    def n_states(self):
        return self.loadings.shape[1]

    @property
    def n_lags(self):
        return self.trans_coeffs.shape[0]

    def companion(self):
        return build_companion(self.trans_intercept, self.trans_coeffs)

    def _arrays(self, T):
        """Expand everything to the dense time-indexed arrays used by the kernels."""
        comp = self.companion()
        N, l = self.loadings.shape
        L = comp.matrix.shape[0]
        Z = np.zeros((N, L))
        Z[:, :l] = self.loadings
        H = np.broadcast_to(self.obs_noise_var, (T, N)).astype(float, copy=True)
        Q = np.zeros((T, L, L))
        cov = np.broadcast_to(self.trans_cov, (T, l, l))
        Q[:, :l, :l] = cov
        return Z, H, comp, Q


@dataclass
class FilterResult:
    means: np.ndarray
    covs: np.ndarray
    loglik: float
    n_states: int
    n_lags: int

    @property
    def state_means(self):
        """Filtered means of the current state block ``s_t``."""
        return self.means[:, :self.n_states]


@njit(cache=True)
def _scalar_update(m, P, z, y, h, Pz):
    """Condition N(m, P) in place on y = z'x + e, e ~ N(0, h).

    Returns ``(F, v, ok)``; ``ok`` is False when the innovation variance is
    numerically zero, in which case nothing is changed.
    """
    L = m.size
    scale = 1.0
    for i in range(L):
        a = abs(P[i, i])
        if a > scale:
            scale = a
    F = h
    v = y
    for i in range(L):
        acc = 0.0
        for j in range(L):
            acc += P[i, j] * z[j]
        Pz[i] = acc
        F += z[i] * acc
        v -= z[i] * m[i]
    if F <= 1e-12 * scale:
        return F, v, False
    for i in range(L):
        m[i] += Pz[i] * v / F
    for i in range(L):
        ki = Pz[i] / F
        for j in range(L):
            P[i, j] -= ki * Pz[j]
    return F, v, True


@njit(cache=True)
def _kalman_filter(y, Z, d, H, c, A, Q, m0, P0):
    T, N = y.shape
    L = m0.size
    ms = np.empty((T, L))
    Ps = np.empty((T, L, L))
    m = m0.copy()
    P = P0.copy()
    Pz = np.empty(L)
    ll = 0.0
    for t in range(T):
        if t > 0:
            m = c + A @ m
            P = A @ P @ A.T + Q[t]
        for i in range(N):
            if np.isnan(y[t, i]):
                continue
            F, v, ok = _scalar_update(m, P, Z[i], y[t, i] - d[i], H[t, i], Pz)
            if ok:
                ll += -0.5 * (_LOG2PI + np.log(F) + v * v / F)
            elif H[t, i] > 0.0 or F < -1e-8 or abs(v) > 1e-8 * (1.0 + abs(y[t, i])):
                # a noiseless row that is already determined must agree with the data
                return ms, Ps, ll, t
        for i in range(L):
            for j in range(i + 1, L):
                s = 0.5 * (P[i, j] + P[j, i])
                P[i, j] = s
                P[j, i] = s
        ms[t] = m
        Ps[t] = P
    return ms, Ps, ll, -1


@njit(cache=True)
def _chol_inplace(S, C, allow_singular=False):
    """Lower Cholesky factor of S into C.

    Returns False if S is not numerically positive definite.  With
    ``allow_singular`` a pivot that is zero up to rounding (a coordinate
    already pinned down exactly) gets a zero column instead, provided the
    matrix stays positive semidefinite.
    """
    n = S.shape[0]
    scale = 1e-300
    for i in range(n):
        scale = max(scale, abs(S[i, i]))
    for j in range(n):
        s = S[j, j]
        for k in range(j):
            s -= C[j, k] * C[j, k]
        if s <= 1e-13 * scale:
            if not allow_singular or s < -1e-9 * scale:
                return False
            for i in range(n):
                C[i, j] = 0.0
            continue
        C[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = 0.5 * (S[i, j] + S[j, i])
            for k in range(j):
                s -= C[i, k] * C[j, k]
            C[i, j] = s / C[j, j]
        for i in range(j):
            C[i, j] = 0.0
    return True


@njit(cache=True)
def _mvn_draw(m, P, eps):
    n = m.size
    C = np.empty((n, n))
    out = m.copy()
    if _chol_inplace(P, C, True):
        for i in range(n):
            acc = 0.0
            for k in range(i + 1):
                acc += C[i, k] * eps[k]
            out[i] += acc
        return out
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    for i in range(w.size):
        w[i] = np.sqrt(w[i]) if w[i] > 0.0 else 0.0
    return m + V @ (w * eps)


@njit(cache=True)
def _backward_sample(ms, Ps, c, A, Lq, Hw, l, eps):
    """Backward pass; ``Lq[t]`` is the Cholesky factor of the shock covariance
    entering period ``t`` and ``Hw[t] = Lq[t]^{-1} A[:l]``."""
    T, L = ms.shape
    X = np.empty((T, L))
    X[T - 1] = _mvn_draw(ms[T - 1], Ps[T - 1], eps[T - 1])
    known = L - l
    Pz = np.empty(L)
    e = np.zeros(L)
    yw = np.empty(l)
    m = np.empty(L)
    P = np.empty((L, L))
    Pu = np.empty((l, l))
    C = np.empty((l, l))
    for t in range(T - 2, -1, -1):
        m[:] = ms[t]
        P[:, :] = Ps[t]
        nxt = X[t + 1]
        # the first (p-1) blocks of x_t are the lag blocks of x_{t+1}
        for j in range(known):
            e[j] = 1.0
            _scalar_update(m, P, e, nxt[l + j], 0.0, Pz)
            e[j] = 0.0
        Cq = Lq[t + 1]
        for i in range(l):
            s = nxt[i] - c[i]
            for k in range(i):
                s -= Cq[i, k] * yw[k]
            yw[i] = s / Cq[i, i]
        for i in range(l):
            _scalar_update(m, P, Hw[t + 1, i], yw[i], 1.0, Pz)
        for j in range(known):
            X[t, j] = nxt[l + j]
        for i in range(l):
            for j in range(l):
                Pu[i, j] = P[known + i, known + j]
        if _chol_inplace(Pu, C, True):
            for i in range(l):
                acc = m[known + i]
                for k in range(i + 1):
                    acc += C[i, k] * eps[t, k]
                X[t, known + i] = acc
        else:
            X[t, known:] = _mvn_draw(m[known:].copy(), Pu.copy(), eps[t, :l].copy())
    return X


@njit(cache=True)
def gaussian_draws(P, rhs, eps):
    """Batched draws from N(P^{-1} rhs, P^{-1}).

    Returns ``(draws, status)``; ``status`` is -1 on success or the index of
    the first batch element whose precision is not positive definite.
    """
    B, d = rhs.shape
    out = np.empty((B, d))
    C = np.empty((d, d))
    y = np.empty(d)
    for b in range(B):
        if not _chol_inplace(P[b], C):
            return out, b
        for i in range(d):
            s = rhs[b, i]
            for k in range(i):
                s -= C[i, k] * y[k]
            y[i] = s / C[i, i]
        for i in range(d - 1, -1, -1):
            s = y[i] + eps[b, i]
            for k in range(i + 1, d):
                s -= C[k, i] * out[b, k]
            out[b, i] = s / C[i, i]
    return out, -1


def _whitened_transition(A, Q, l):
    T = Q.shape[0]
    Lq = np.empty((T, l, l))
    Hw = np.empty((T, l, A.shape[1]))
    Lq[0] = np.eye(l)
    Hw[0] = A[:l]
    if T > 1:
        if np.array_equal(Q[1:, :l, :l].min(axis=0), Q[1:, :l, :l].max(axis=0)):
            # constant innovation covariance: factor once
            L1 = np.linalg.cholesky(Q[1, :l, :l])
            Lq[1:] = L1
            Hw[1:] = np.linalg.solve(L1, A[:l])
        else:
            Lq[1:] = np.linalg.cholesky(Q[1:, :l, :l])
            Hw[1:] = np.linalg.solve(Lq[1:], np.broadcast_to(A[:l, :], (T - 1, l, A.shape[1])))
    return Lq, Hw


def _prepare(system, observations):
    y = np.atleast_2d(np.asarray(observations, dtype=float))
    if y.shape[1] != system.loadings.shape[0]:
        raise ValueError(f"observations have {y.shape[1]} columns, expected {system.loadings.shape[0]}")
    T = y.shape[0]
    Z, H, comp, Q = system._arrays(T)
    return y, Z, H, comp, Q


def _run_filter(y, Z, d, H, comp, Q, m0, P0):
    ms, Ps, ll, status = _kalman_filter(y, Z, d, H, comp.intercept, comp.matrix, Q, m0, P0)
    if status >= 0:
        raise np.linalg.LinAlgError(f"innovation variance is not positive at time index {status}")
    return ms, Ps, ll


def kalman_filter(system, observations):
    """Run the Kalman filter and return filtered moments and the log-likelihood.

    Missing observations may be passed as NaN and are skipped.
    """
    y, Z, H, comp, Q = _prepare(system, observations)
    ms, Ps, ll = _run_filter(y, Z, system.obs_intercept, H, comp, Q,
                             system.init_mean, system.init_cov)
    return FilterResult(ms, Ps, float(ll), system.n_states, system.n_lags)


def carter_kohn_draw(system, observations, rng=None, return_companion=False):
    """Forward-filter backward-sample one path from the smoothing distribution.

    Returns the ``(T, l)`` path of current-state blocks; with
    ``return_companion=True`` the full ``(T, l*p)`` companion draws are
    returned instead (their first row contains the pre-sample lags).
    """
    rng = check_random_state(rng)
    y, Z, H, comp, Q = _prepare(system, observations)
    l = system.n_states
    for t in range(1, y.shape[0]):
        try:
            np.linalg.cholesky(Q[t, :l, :l])
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"state innovation covariance is not positive definite at t={t}")
    ms, Ps, _ = _run_filter(y, Z, system.obs_intercept, H, comp, Q, system.init_mean, system.init_cov)
    eps = rng.standard_normal(ms.shape)
    Lq, Hw = _whitened_transition(comp.matrix, Q, l)
    X = _backward_sample(ms, Ps, comp.intercept, comp.matrix, Lq, Hw, l, eps)
    return X if return_companion else X[:, :l]


def simulation_smoother_arrays(y, Z, d, H, c, A, Q, m0, P0, l, eps):
    """Array-level entry point used by the Gibbs sampler (no validation)."""
    ms, Ps, ll, status = _kalman_filter(y, Z, d, H, c, A, Q, m0, P0)
    if status >= 0:
        raise np.linalg.LinAlgError(f"innovation variance is not positive at time index {status}")
    Lq, Hw = _whitened_transition(A, Q, l)
    return _backward_sample(ms, Ps, c, A, Lq, Hw, l, eps)
