"""Asymmetric Laplace and order-1/2 generalized inverse Gaussian utilities.

Scale convention: the asymmetric Laplace with quantile level ``q`` and scale
``scale`` has density

    q (1 - q) / scale * exp(-rho_q(u) / scale),

where ``rho_q`` is the check function.  This is the parameterisation in which
the latent-variable representation

    u | z ~ N(kappa1 * z, kappa2^2 * scale * z),   z ~ Exponential(mean=scale)

holds, and it is the one used by every sampler and variational update in the
package.  Writers who quote the scale as ``sigma^2`` should pass that value as
``scale``.
"""

from dataclasses import dataclass

import numpy as np

from .validation import check_quantile, check_random_state

__all__ = [
    "ALParams",
    "MixtureConstants",
    "al_density",
    "al_quantile",
    "mixture_constants",
    "al_mixture_draw",
    "gig_moments",
    "gig_draw",
]


@dataclass(frozen=True)
class ALParams:
    """Asymmetric Laplace parameters (quantile level and scale)."""

    q: float
    scale: float = 1.0

    def __post_init__(self):
        check_quantile(self.q)
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale!r}")


@dataclass(frozen=True)
class MixtureConstants:
    kappa1: float
    kappa2_sq: float

    @property
    def kappa2(self):
        return float(np.sqrt(self.kappa2_sq))


def mixture_constants(q):
    """Location and scale constants of the normal-exponential mixture.

    >>> mixture_constants(0.5)
    MixtureConstants(kappa1=0.0, kappa2_sq=8.0)
    """
    q = check_quantile(q)
    return MixtureConstants((1.0 - 2.0 * q) / (q * (1.0 - q)), 2.0 / (q * (1.0 - q)))


def al_density(u, params):
    """Evaluate the asymmetric Laplace density at ``u`` (vectorised)."""
    if not isinstance(params, ALParams):
        raise TypeError("params must be an ALParams instance")
    q, s = params.q, params.scale
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        expo = np.where(u <= 0.0, (1.0 - q) * u / s, -q * u / s)
    return q * (1.0 - q) / s * np.exp(expo)


def al_quantile(p, params):
    """Inverse CDF of the asymmetric Laplace; the ``params.q`` quantile is 0."""
    q, s = params.q, params.scale
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("probabilities must lie in (0, 1)")
    lower = s * np.log(p / q) / (1.0 - q)
    upper = -s * np.log((1.0 - p) / (1.0 - q)) / q
    return np.where(p <= q, lower, upper)


def al_mixture_draw(params, rng=None, size=None):
    """Draw ``(u, z)`` through the normal-exponential mixture.

    ``z`` is exponential with mean ``params.scale``; conditionally on ``z``,
    ``u`` is Gaussian with mean ``kappa1 * z`` and variance
    ``kappa2^2 * scale * z``.  Marginally ``u`` is asymmetric Laplace.
    """
    rng = check_random_state(rng)
    k = mixture_constants(params.q)
    z = rng.exponential(params.scale, size=size)
    u = k.kappa1 * z + np.sqrt(k.kappa2_sq * params.scale * z) * rng.standard_normal(size=size)
    return u, z


def _check_gig(delta, rho):
    d = np.asarray(delta, dtype=float)
    r = np.asarray(rho, dtype=float)
    if np.any(~(d > 0)) or np.any(~(r > 0)) or np.any(~np.isfinite(d)) or np.any(~np.isfinite(r)):
        raise ValueError("GIG parameters delta and rho must be finite and > 0")
    return d, r


def gig_moments(delta, rho):
    """Return ``(E[z], E[1/z])`` for ``z ~ GIG(1/2, delta, rho)``.

    The density is proportional to ``z^(-1/2) exp(-(delta z + rho / z) / 2)``.
    At order 1/2 the Bessel ratio ``K_{3/2}(x) / K_{1/2}(x)`` equals
    ``1 + 1/x`` so both moments are available in closed form.
    """
    d, r = _check_gig(delta, rho)
    x = np.sqrt(d * r)
    ratio = 1.0 + 1.0 / x
    ez = np.sqrt(r / d) * ratio
    einv = np.sqrt(d / r) * ratio - 1.0 / r
    return ez, einv


def gig_draw(delta, rho, rng=None, size=None):
    """Draw from ``GIG(1/2, delta, rho)`` via the reciprocal inverse Gaussian.

    If ``x ~ InverseGaussian(mean=sqrt(delta/rho), shape=delta)`` then
    ``1/x`` has the required law.
    """
    d, r = _check_gig(delta, rho)
    rng = check_random_state(rng)
    return 1.0 / rng.wald(np.sqrt(d / r), d, size=size)
