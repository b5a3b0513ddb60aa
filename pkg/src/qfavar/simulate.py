"""Synthetic panels with known quantile factors.

Data-generating process
-----------------------
A location factor ``f^i_t`` per indicator and the globals ``g_t`` follow a
stable VAR(p).  Each series is

    y_ijt = c_ij + lambda_ij * (f^i_t + s_i * v^i_t * eps_ijt) + gamma_ij' g_t,

where ``eps`` has median zero and ``v^i_t = exp(b * x_{t-1})`` is an optional
predictable volatility driven by the first global (or the first factor when
there are no globals).  With positive loadings the conditional q-quantile of
``y_ijt`` is ``c_ij + lambda_ij f^i_t(q) + gamma_ij' g_t`` with the ordered
quantile factors

    f^i_t(q) = f^i_t + s_i * v^i_t * Q_eps(q),

so every quantile block shares the loadings and intercepts.  The first
country of each indicator has ``c = 0``, ``lambda = 1`` and ``gamma = 0``,
matching the identification restrictions of the estimators.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .distributions import ALParams, al_mixture_draw, al_quantile
from .panel import PanelData
from .statespace import build_companion
from .validation import check_int, check_quantiles, check_random_state

__all__ = ["SimulationSettings", "GroundTruth", "simulate_qfavar"]


@dataclass
class SimulationSettings:
    """Knobs of the generator.

    ``noise`` is ``"laplace"`` (symmetric) or ``"skew"`` (asymmetric Laplace
    with quantile level ``skew_q``, re-centred to median zero).  ``hetero``
    is the volatility coefficient ``b``.  ``max_radius`` caps the spectral
    radius of the VAR companion matrix.
    """

    quantiles: tuple = (0.1, 0.5, 0.9)
    noise: str = "laplace"
    skew_q: float = 0.25
    noise_scale: float = 0.15
    hetero: float = 0.0
    max_radius: float = 0.9
    loading_range: tuple = (0.5, 1.5)
    intercept_sd: float = 1.0
    gamma_sd: float = 0.3
    burn: int = 100

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in check_quantiles(self.quantiles))
        if self.noise not in ("laplace", "skew"):
            raise ValueError("noise must be 'laplace' or 'skew'")
        if not 0 < self.max_radius < 0.98 + 1e-12:
            raise ValueError("max_radius must lie in (0, 0.98]")
        lo, hi = self.loading_range
        if not 0 < lo <= hi:
            raise ValueError("loading_range must be positive")


@dataclass
class GroundTruth:
    """True parameters and paths of a simulated panel.

    ``lam``, ``c`` and ``gamma`` are per measurement block (quantile-major,
    like the estimators).  ``Phi``, ``v`` and ``Omega`` describe the VAR of
    the location state ``[f_t, g_t]``; ``F`` holds the quantile factors.
    """

    quantiles: tuple
    lam: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    noise_scale: np.ndarray
    Phi: np.ndarray
    v: np.ndarray
    Omega: np.ndarray
    F: np.ndarray
    f_location: np.ndarray
    G: np.ndarray
    volatility: np.ndarray
    seed: object = None
    settings: dict = field(default_factory=dict)

    def to_json(self):
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return json.dumps(out)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        for k in ("lam", "c", "gamma", "noise_scale", "Phi", "v", "Omega", "F", "f_location", "G", "volatility"):
            data[k] = np.asarray(data[k], dtype=float)
        data["quantiles"] = tuple(data["quantiles"])
        return cls(**data)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def _stable_var(l, p, max_radius, rng):
    Phi = np.zeros((p, l, l))
    Phi[0] = np.diag(rng.uniform(0.4, 0.8, l)) + 0.1 * rng.standard_normal((l, l)) * (1 - np.eye(l))
    for lag in range(1, p):
        Phi[lag] = 0.05 * rng.standard_normal((l, l))
    for _ in range(200):
        radius = np.max(np.abs(np.linalg.eigvals(build_companion(None, Phi).matrix)))
        if radius < max_radius:
            break
        Phi *= 0.95
    return Phi


def simulate_qfavar(dims, settings=None, rng=None):
    """Draw a synthetic panel and its ground truth.

    Parameters
    ----------
    dims : dict
        Keys ``m, n, k, T, p`` (``R`` is implied by ``settings.quantiles``).
    settings : SimulationSettings or dict, optional
    rng : int, Generator or None

    Returns
    -------
    (PanelData, GroundTruth)
    """
    settings = settings or SimulationSettings()
    if isinstance(settings, dict):
        settings = SimulationSettings(**settings)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = check_random_state(rng)
    m = check_int(dims["m"], "m", 1)
    n = check_int(dims["n"], "n", 1)
    k = check_int(dims.get("k", 0), "k", 0)
    T = check_int(dims["T"], "T", 2)
    p = check_int(dims.get("p", 1), "p", 1)
    if "R" in dims and dims["R"] != len(settings.quantiles):
        raise ValueError("R does not match the number of quantile levels")

    l = m + k
    Phi = _stable_var(l, p, settings.max_radius, rng)
    v = 0.1 * rng.standard_normal(l)
    W = rng.standard_normal((l, l)) * 0.3 + np.eye(l)
    Omega = W @ W.T / l + 0.5 * np.eye(l)
    comp = build_companion(v, Phi)
    chol = np.linalg.cholesky(Omega)
    L = l * p
    x = np.zeros(L)
    total = T + settings.burn
    states = np.empty((total, l))
    for t in range(total):
        x = comp.intercept + comp.matrix @ x
        x[:l] += chol @ rng.standard_normal(l)
        states[t] = x[:l]
    states = states[settings.burn:]
    f_loc, G = states[:, :m], states[:, m:]

    driver = G[:, 0] if k else f_loc[:, 0]
    driver = (driver - driver.mean()) / (driver.std() + 1e-12)
    lagged = np.concatenate([[0.0], driver[:-1]])
    vol = np.exp(settings.hetero * np.clip(lagged, -3, 3))

    lo, hi = settings.loading_range
    lam = rng.uniform(lo, hi, (m, n))
    c = settings.intercept_sd * rng.standard_normal((m, n))
    lam[:, 0] = 1.0
    c[:, 0] = 0.0
    gamma = settings.gamma_sd * rng.standard_normal((m, n, k))
    gamma[:, 0, :] = 0.0
    s = settings.noise_scale * np.ones(m)

    if settings.noise == "skew":
        params = ALParams(settings.skew_q, 1.0)
    else:
        params = ALParams(0.5, 1.0)
    centre = float(al_quantile(0.5, params))
    eps, _ = al_mixture_draw(params, rng, size=(T, m, n))
    eps = eps - centre
    qshift = np.array([float(al_quantile(q, params)) - centre for q in settings.quantiles])

    Y = np.empty((T, m, n))
    for i in range(m):
        noise = s[i] * vol[:, None] * eps[:, i, :]
        Y[:, i, :] = c[i] + lam[i] * (f_loc[:, [i]] + noise) + G @ gamma[i].T
    values = Y.reshape(T, m * n)

    R = len(settings.quantiles)
    F = np.empty((T, m * R))
    for r in range(R):
        for i in range(m):
            F[:, r * m + i] = f_loc[:, i] + s[i] * vol * qshift[r]

    index = pd.date_range("2000-01-01", periods=T, freq="MS")
    panel = PanelData(values, G, [f"IND{i + 1}" for i in range(m)], [f"C{j + 1}" for j in range(n)],
                      [f"G{g + 1}" for g in range(k)], index)
    block_lam = np.tile(lam.reshape(-1), R)
    block_c = np.tile(c.reshape(-1), R)
    block_gamma = np.tile(gamma.reshape(m * n, k), (R, 1))
    truth = GroundTruth(settings.quantiles, block_lam, block_c, block_gamma, s, Phi, v, Omega, F, f_loc, G,
                        vol, seed, asdict(settings))
    return panel, truth
