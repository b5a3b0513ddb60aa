"""Generalized impulse responses, variance decompositions and connectedness.

Conventions
-----------
Responses follow the one-standard-deviation generalized scheme: the response
of the state to shock ``j`` at horizon ``h`` is ``Psi_h Omega e_j / sqrt(omega_jj)``
with ``Psi_h`` the moving-average coefficients of the VAR.  Forecast-error
variance shares use horizons ``0..H-1``; rows are reported both raw and
normalized to sum to one.  Bands are the 16th, 50th and 84th percentiles
across draws.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .statespace import build_companion, spectral_radius

log = logging.getLogger(__name__)

__all__ = ["IRFResult", "FEVDResult", "ConnectednessMatrix", "ma_coefficients", "girf",
           "project_to_measurement", "gfevd", "variable_fevd", "connectedness", "irf_from_draws",
           "fevd_from_draws", "BAND_LEVELS"]

BAND_LEVELS = (16.0, 50.0, 84.0)


def ma_coefficients(Phi, H):
    """``(H+1, l, l)`` moving-average coefficients ``Psi_0 = I, Psi_1, ..., Psi_H``."""
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 2:
        Phi = Phi[None]
    p, l, _ = Phi.shape
    Psi = np.zeros((H + 1, l, l))
    Psi[0] = np.eye(l)
    for h in range(1, H + 1):
        for lag in range(1, min(h, p) + 1):
            Psi[h] += Phi[lag - 1] @ Psi[h - lag]
    return Psi


def _stack_draws(Phi_draws, Omega_draws):
    Phi = np.asarray(Phi_draws, dtype=float)
    Omega = np.asarray(Omega_draws, dtype=float)
    if Omega.ndim == 2:
        Omega = Omega[None]
    if Phi.ndim == 2:
        Phi = Phi[None, None]
    elif Phi.ndim == 3:
        Phi = Phi[:, None] if Phi.shape[0] == Omega.shape[0] and Phi.shape[1] == Phi.shape[2] else Phi[None]
    if Phi.shape[0] != Omega.shape[0]:
        raise ValueError(f"{Phi.shape[0]} coefficient draws but {Omega.shape[0]} covariance draws")
    if Phi.shape[-1] != Omega.shape[-1]:
        raise ValueError("coefficient and covariance dimensions differ")
    diag = np.diagonal(Omega, axis1=1, axis2=2)
    if np.any(diag <= 0):
        raise ValueError("shock variance omega_jj must be positive")
    return Phi, Omega


def _bands(x):
    lo, med, hi = np.percentile(x, BAND_LEVELS, axis=0)
    return lo, med, hi


@dataclass
class IRFResult:
    """Generalized impulse responses to one shock.

    ``draws`` has shape ``(D, H+1, l)``; ``lower``, ``median`` and ``upper``
    are the 16/50/84 percentile bands.  ``variable_*`` hold the projections to
    the measurement blocks when loadings were supplied.
    """

    shock: int
    draws: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    variable_lower: np.ndarray = None
    variable_median: np.ndarray = None
    variable_upper: np.ndarray = None

    @property
    def horizon(self):
        return self.draws.shape[1] - 1

    def to_frame(self, shock_label, state_labels, variable_labels=None, variable_quantiles=None,
                 state_quantiles=None):
        """Tidy table keyed by (shock, target, quantile, horizon)."""
        rows = []
        H = self.horizon
        sq = state_quantiles if state_quantiles is not None else [np.nan] * len(state_labels)
        for s, name in enumerate(state_labels):
            for h in range(H + 1):
                rows.append(("state", shock_label, name, sq[s], h, self.lower[h, s], self.median[h, s],
                             self.upper[h, s]))
        if self.variable_median is not None:
            vq = variable_quantiles if variable_quantiles is not None else [np.nan] * len(variable_labels)
            for b, name in enumerate(variable_labels):
                for h in range(H + 1):
                    rows.append(("variable", shock_label, name, vq[b], h, self.variable_lower[h, b],
                                 self.variable_median[h, b], self.variable_upper[h, b]))
        return pd.DataFrame(rows, columns=["level", "shock", "target", "quantile", "horizon",
                                           "lower", "median", "upper"])


def girf(Phi_draws, Omega_draws, shock_index, H, loadings=None):
    """Generalized impulse responses of the state to shock ``shock_index``.

    Parameters
    ----------
    Phi_draws : ndarray (D, p, l, l)
        Lag matrices per draw (a single ``(p, l, l)`` or ``(l, l)`` array is
        treated as one draw).
    Omega_draws : ndarray (D, l, l)
    shock_index : int
    H : int
        Last horizon; responses cover ``0..H``.
    loadings : ndarray (B, l) or (D, B, l), optional
        Projection ``[Lambda, Gamma]`` used for variable-level responses.
    """
    Phi, Omega = _stack_draws(Phi_draws, Omega_draws)
    D, _, l, _ = Phi.shape
    j = int(shock_index)
    if not 0 <= j < l:
        raise ValueError(f"shock index {j} outside 0..{l - 1}")
    if H < 0:
        raise ValueError("H must be >= 0")
    out = np.empty((D, H + 1, l))
    for d in range(D):
        Psi = ma_coefficients(Phi[d], H)
        out[d] = Psi @ Omega[d][:, j] / np.sqrt(Omega[d][j, j])
    res = IRFResult(j, out, *_bands(out))
    if loadings is not None:
        var = project_to_measurement(out, loadings)
        res.variable_lower, res.variable_median, res.variable_upper = _bands(var)
    return res


def project_to_measurement(state_paths, loadings, intercepts=None):
    """Map state paths to the measurement blocks: ``[Lambda, Gamma] s (+ c)``.

    ``state_paths`` has trailing dimension ``l``; ``loadings`` is ``(B, l)``
    or, with a leading draw axis matching ``state_paths``, ``(D, B, l)``.
    """
    S = np.asarray(state_paths, dtype=float)
    M = np.asarray(loadings, dtype=float)
    if S.shape[-1] != M.shape[-1]:
        raise ValueError(f"state dimension {S.shape[-1]} does not match loadings {M.shape}")
    if M.ndim == 3:
        if S.shape[0] != M.shape[0]:
            raise ValueError("per-draw loadings need one state path per draw")
        out = np.einsum("d...l,dbl->d...b", S, M)
    else:
        out = S @ M.T
    if intercepts is not None:
        out = out + np.asarray(intercepts, dtype=float)
    return out


@dataclass
class FEVDResult:
    """Generalized variance shares at one horizon.

    ``state_raw``/``state`` are ``(D, l, l)`` (row = target, column = shock)
    before and after row normalization; ``variable`` is ``(D, B, l)`` when
    loadings were supplied.  ``median`` gives the across-draw medians.
    """

    horizon: int
    state_raw: np.ndarray
    state: np.ndarray
    variable_raw: np.ndarray = None
    variable: np.ndarray = None

    def median(self, name="state"):
        return np.median(getattr(self, name), axis=0)


def _generalized_shares(C, Omega, sd):
    """Raw generalized shares for targets with MA rows ``C`` (H, n, l)."""
    num = np.sum((C @ Omega) ** 2, axis=0) / sd[None, :] ** 2
    den = np.einsum("hil,lm,him->i", C, Omega, C)
    return num / den[:, None]


def _normalize(raw):
    return raw / raw.sum(axis=-1, keepdims=True)


def gfevd(Phi_draws, Omega_draws, H, loadings=None):
    """Generalized forecast-error variance decomposition at horizon ``H``.

    Uses the MA coefficients ``Psi_0..Psi_{H-1}``.  Returns an
    :class:`FEVDResult` holding raw and row-normalized shares.
    """
    Phi, Omega = _stack_draws(Phi_draws, Omega_draws)
    if H < 1:
        raise ValueError("H must be >= 1")
    D, _, l, _ = Phi.shape
    raw = np.empty((D, l, l))
    vraw = None
    if loadings is not None:
        M = np.asarray(loadings, dtype=float)
        if M.shape[-1] != l:
            raise ValueError(f"loadings have {M.shape[-1]} columns, expected {l}")
        vraw = np.empty((D,) + M.shape[-2:])
    for d in range(D):
        Psi = ma_coefficients(Phi[d], H - 1)
        sd = np.sqrt(np.diag(Omega[d]))
        raw[d] = _generalized_shares(Psi, Omega[d], sd)
        if vraw is not None:
            Md = M[d] if M.ndim == 3 else M
            vraw[d] = _generalized_shares(Md @ Psi, Omega[d], sd)
    res = FEVDResult(H, raw, _normalize(raw))
    if vraw is not None:
        res.variable_raw, res.variable = vraw, _normalize(vraw)
    return res


def variable_fevd(Phi_draws, Omega_draws, loadings, H):
    """Variable-level shares ``D^h`` (rows normalized over the state shocks).

    Idiosyncratic measurement noise is not a state shock and is excluded.
    """
    res = gfevd(Phi_draws, Omega_draws, H, loadings)
    return res.variable


@dataclass
class ConnectednessMatrix:
    """Augmented share matrix read as a weighted directed adjacency matrix.

    ``matrix`` is ``[[0, D], [0, D_s]]`` over the nodes ``labels``
    (variables first, then states); entry ``[i, j]`` is the connectedness
    ``C_{i<-j}``.  ``edges`` lists off-diagonal entries at or above
    ``threshold``.
    """

    matrix: np.ndarray
    labels: list
    threshold: float
    edges: pd.DataFrame

    def to_dot(self, name="connectedness"):
        lines = [f"digraph {name} {{"]
        for lab in self.labels:
            lines.append(f'  "{lab}";')
        for row in self.edges.itertuples(index=False):
            lines.append(f'  "{row.source}" -> "{row.target}" [weight={row.weight:.6f}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def connectedness(D_var, D_state, threshold=0.05, variable_labels=None, state_labels=None):
    """Assemble the augmented matrix and the directed edge list.

    Parameters
    ----------
    D_var : ndarray (B, l)
        Variable-level shares.
    D_state : ndarray (l, l)
        State-level shares.
    threshold : float in [0, 1)
        Edges with weight below it are dropped; self-loops are never edges.
    """
    D_var = np.asarray(D_var, dtype=float)
    D_state = np.asarray(D_state, dtype=float)
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    B, l = D_var.shape
    if D_state.shape != (l, l):
        raise ValueError(f"state shares {D_state.shape} do not match {l} states")
    for name, arr in (("variable", D_var), ("state", D_state)):
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise ValueError(f"{name} shares must lie in [0, 1]")
    variable_labels = list(variable_labels) if variable_labels is not None else [f"y{b}" for b in range(B)]
    state_labels = list(state_labels) if state_labels is not None else [f"s{s}" for s in range(l)]
    N = B + l
    A = np.zeros((N, N))
    A[:B, B:] = D_var
    A[B:, B:] = D_state
    labels = variable_labels + state_labels
    rows = []
    for i in range(N):
        for j in range(B, N):
            if i != j and A[i, j] >= threshold and A[i, j] > 0:
                rows.append((labels[j], labels[i], A[i, j]))
    edges = pd.DataFrame(rows, columns=["source", "target", "weight"])
    return ConnectednessMatrix(A, labels, float(threshold), edges)


def _usable_draws(draws, mode, filter_explosive):
    Phi = draws.Phi
    Omega = draws.omegas(mode)
    keep = np.ones(draws.n_draws, dtype=bool)
    if filter_explosive:
        keep = np.array([spectral_radius(build_companion(None, Phi[d]).matrix) < 1.0
                         for d in range(draws.n_draws)])
        if not keep.any():
            raise ValueError("every draw is explosive")
        if not keep.all():
            log.info("excluded %d explosive draws", int((~keep).sum()))
    return Phi[keep], Omega[keep], keep


def _loadings(draws, keep):
    return np.stack([draws.observation_matrix(d)[0] for d in np.flatnonzero(keep)])


def irf_from_draws(draws, shock, H, mode="mean", filter_explosive=False):
    """GIRF of a fitted model to the state labelled (or indexed) ``shock``."""
    labels = draws.state_labels
    j = labels.index(shock) if isinstance(shock, str) else int(shock)
    Phi, Omega, keep = _usable_draws(draws, mode, filter_explosive)
    return girf(Phi, Omega, j, H, _loadings(draws, keep))


def fevd_from_draws(draws, H, mode="mean", filter_explosive=False):
    Phi, Omega, keep = _usable_draws(draws, mode, filter_explosive)
    return gfevd(Phi, Omega, H, _loadings(draws, keep))
