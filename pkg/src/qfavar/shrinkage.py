"""Horseshoe prior: Gibbs conditionals and variational expectation updates.

Inverse-gamma laws use the rate parameterisation throughout: ``IG(a, b)`` has
density proportional to ``x^(-a-1) exp(-b / x)`` and ``E[1/x] = a / b``.

The Gibbs hierarchy (one global scale per coefficient vector) is

    theta_k ~ N(0, scale * tau^2 * lam_k^2),
    lam_k^2 | nu_k ~ IG(1/2, 1/nu_k),  nu_k ~ IG(1/2, 1),
    tau^2 | xi ~ IG(1/2, 1/xi),        xi ~ IG(1/2, 1).

The variational updates follow the hierarchy used by the two-step estimator,
in which every coefficient carries its own ``tau_k^2`` and the local
auxiliaries are scaled by ``b``:

    theta_k ~ N(0, lam_k^2),  lam_k^2 | nu_k ~ IG(1/2, 1/nu_k),
    nu_k | tau_k^2 ~ IG(1/2, 1/(b^2 tau_k^2)),
    tau_k^2 | xi ~ IG(1/2, 1/xi),  xi ~ IG(1/2, 1).

The variational ``theta`` prior precision is ``E[1/lam_k^2] * E[1/tau_k^2]``
for measurement equations and ``E[1/lam_k^2]`` for VAR rows, as in the
published algorithm.
"""

from dataclasses import dataclass, replace

import numpy as np

from .validation import check_random_state

FLOOR = 1e-12
CEIL = 1e12

__all__ = [
    "HorseshoeState",
    "HorseshoeVBState",
    "horseshoe_gibbs_update",
    "horseshoe_vb_update",
    "inverse_gamma",
]


def inverse_gamma(shape, rate, rng):
    """Draw ``IG(shape, rate)`` (rate parameterisation), floored at 1e-12."""
    return np.maximum(np.asarray(rate) / rng.gamma(shape, size=np.shape(rate)), FLOOR)


@dataclass
class HorseshoeState:
    """Current values of the horseshoe scales for a batch of coefficient vectors.

    ``local_scales`` and ``local_aux`` have shape ``batch + (K,)`` while
    ``global_scale`` and ``global_aux`` have shape ``batch``.
    """

    local_scales: np.ndarray
    local_aux: np.ndarray
    global_scale: np.ndarray
    global_aux: np.ndarray

    @classmethod
    def initial(cls, shape):
        shape = tuple(np.atleast_1d(shape))
        return cls(np.ones(shape), np.ones(shape), np.ones(shape[:-1]), np.ones(shape[:-1]))

    def prior_variance(self):
        return self.local_scales * self.global_scale[..., None]

    def copy(self):
        return HorseshoeState(*(np.array(a, copy=True) for a in
                                (self.local_scales, self.local_aux, self.global_scale, self.global_aux)))


def horseshoe_gibbs_update(theta, state, rng=None, scale=1.0, mask=None):
    """One Gibbs pass over the horseshoe scales given coefficients ``theta``.

    Parameters
    ----------
    theta : ndarray, shape batch + (K,)
    state : HorseshoeState
    scale : float or ndarray broadcastable to ``batch``
        Multiplier of the prior variance (1 when the coefficient prior is not
        scaled by the error variance).
    mask : bool ndarray, optional
        ``True`` marks coefficients that are actually shrunk; other entries
        (fixed or unpenalised) are skipped and do not count towards the global
        shape parameter.

    Returns
    -------
    HorseshoeState
        A new state; the input is not modified.
    """
    rng = check_random_state(rng)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != state.local_scales.shape:
        raise ValueError(
            f"theta has shape {theta.shape} but the state holds {state.local_scales.shape}")
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ValueError("scale must be > 0")
    if mask is None:
        mask = np.ones(theta.shape, dtype=bool)
    mask = np.broadcast_to(mask, theta.shape)
    sc = scale[..., None] if scale.ndim else scale
    t2 = theta ** 2 / sc

    lam = inverse_gamma(1.0, 0.5 * t2 / state.global_scale[..., None] + 1.0 / state.local_aux, rng)
    lam = np.where(mask, lam, state.local_scales)
    nu = inverse_gamma(1.0, 1.0 + 1.0 / lam, rng)
    nu = np.where(mask, nu, state.local_aux)
    n_free = mask.sum(axis=-1)
    tau = inverse_gamma(0.5 * (n_free + 1.0),
                        1.0 / state.global_aux + 0.5 * np.sum(np.where(mask, t2 / lam, 0.0), axis=-1), rng)
    xi = inverse_gamma(1.0, 1.0 + 1.0 / tau, rng)
    return HorseshoeState(lam, nu, tau, xi)


@dataclass
class HorseshoeVBState:
    """Variational expectations of the inverse horseshoe scales.

    All arrays have shape batch + (K,) except ``e_inv_xi`` (shape batch).
    ``b`` is the scale hyperparameter of the local auxiliaries.
    """

    e_inv_local: np.ndarray
    e_inv_aux: np.ndarray
    e_inv_global: np.ndarray
    e_inv_xi: np.ndarray
    b: float = 1e-4

    @classmethod
    def initial(cls, shape, b=1e-4):
        shape = tuple(np.atleast_1d(shape))
        return cls(np.ones(shape), np.ones(shape), np.ones(shape), np.ones(shape[:-1]), b)

    def precision(self, use_global=True):
        """Prior precision of the coefficients implied by the expectations."""
        if use_global:
            return self.e_inv_local * self.e_inv_global
        return self.e_inv_local.copy()


def horseshoe_vb_update(e_theta_sq, state, mask=None):
    """Closed-form coordinate-ascent update of the horseshoe expectations.

    Parameters
    ----------
    e_theta_sq : ndarray
        ``E[theta_k^2]`` under the current Gaussian factor, same shape as the
        local expectations.
    state : HorseshoeVBState
    mask : bool ndarray, optional
        Coefficients excluded from shrinkage keep their expectations and do
        not enter the global update.
    """
    e2 = np.asarray(e_theta_sq, dtype=float)
    if e2.shape != state.e_inv_local.shape:
        raise ValueError(f"E[theta^2] has shape {e2.shape}, expected {state.e_inv_local.shape}")
    if np.any(e2 < 0) or not np.all(np.isfinite(e2)):
        raise ValueError("E[theta^2] must be finite and nonnegative")
    if mask is None:
        mask = np.ones(e2.shape, dtype=bool)
    mask = np.broadcast_to(mask, e2.shape)
    binv2 = state.b ** -2

    def inv(shape, rate):
        return np.clip(shape / np.maximum(rate, FLOOR), FLOOR, CEIL)

    lam = inv(1.0, 0.5 * e2 + state.e_inv_aux)
    lam = np.where(mask, lam, state.e_inv_local)
    aux = inv(1.0, lam + binv2 * state.e_inv_global)
    aux = np.where(mask, aux, state.e_inv_aux)
    glob = inv(1.0, binv2 * aux + state.e_inv_xi[..., None])
    glob = np.where(mask, glob, state.e_inv_global)
    n_free = mask.sum(axis=-1)
    xi = inv(0.5 * (n_free + 1.0), 1.0 + np.sum(np.where(mask, glob, 0.0), axis=-1))
    return replace(state, e_inv_local=lam, e_inv_aux=aux, e_inv_global=glob, e_inv_xi=xi)
