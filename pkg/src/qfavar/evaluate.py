"""Quantile scores, tests of equal predictive accuracy and factor commonality."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

__all__ = ["quantile_score", "dm_tstat", "commonality_r2", "commonality_table", "ScoreSeries",
           "tstat_table", "format_report"]


def quantile_score(y, Q, q, printed_sign=False):
    """Tick loss ``(q - 1{y <= Q}) (y - Q)``, elementwise.

    The loss is nonnegative and lower is better.  ``printed_sign=True``
    returns its negative, the nonpositive variant of the same score.
    """
    y = np.asarray(y, dtype=float)
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    loss = (q - (y <= Q)) * (y - Q)
    return -loss if printed_sign else loss


def _newey_west_var(d, lags):
    d = d - d.mean()
    n = d.size
    v = d @ d / n
    for j in range(1, lags + 1):
        w = 1.0 - j / (lags + 1.0)
        v += 2.0 * w * (d[j:] @ d[:-j]) / n
    return v * n / (n - 1.0)


def dm_tstat(loss_a, loss_b, h=1):
    """t-statistic of ``mean(loss_a - loss_b) = 0`` with a Newey-West variance (lag ``h-1``).

    Negative values mean model ``a`` has the smaller average loss.  The
    long-run variance carries the small-sample factor ``n/(n-1)``, so with
    ``h = 1`` this is exactly the one-sample t-test on the loss differential.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("loss vectors must be one-dimensional and of equal length")
    if a.size <= 10:
        raise ValueError("need more than 10 losses")
    d = a - b
    v = _newey_west_var(d, max(int(h) - 1, 0))
    if not v > 0:
        if np.all(d == 0):
            return 0.0
        raise ValueError("loss differential has zero variance")
    return float(d.mean() / np.sqrt(v / d.size))


def commonality_r2(y, F):
    """Uncentred R^2 ``||F (F'F)^{-1} F' y||^2 / ||y||^2`` of ``y`` on the columns of ``F``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != y.size:
        raise ValueError("y and F must have the same number of rows")
    if np.linalg.matrix_rank(F) < F.shape[1]:
        raise ValueError("factor matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(F, y, rcond=None)
    fit = F @ coef
    return float(min(max(fit @ fit / (y @ y), 0.0), 1.0))


def commonality_table(Y, series_labels, indicator_of, mean_factors, quantile_factors, quantiles):
    """Commonality of every series with the factors of its own indicator.

    Parameters
    ----------
    Y : ndarray (T, S)
    indicator_of : sequence of int
        Indicator index of each series.
    mean_factors : ndarray (T, m)
        Posterior mean of the mean (median-only Gaussian) factors.
    quantile_factors : ndarray (T, m R)
        Posterior mean of the quantile factors (quantile-major).
    quantiles : sequence of float

    Returns
    -------
    DataFrame with columns ``F``, ``F+tails`` (lowest and highest level) and
    ``F+all``.
    """
    m = mean_factors.shape[1]
    R = len(quantiles)
    rows = []
    for s, label in enumerate(series_labels):
        i = indicator_of[s]
        base = mean_factors[:, [i]]
        tails = quantile_factors[:, [0 * m + i, (R - 1) * m + i]] if R > 1 else np.zeros((len(Y), 0))
        allq = quantile_factors[:, [r * m + i for r in range(R)]]
        rows.append((label, commonality_r2(Y[:, s], base), commonality_r2(Y[:, s], np.hstack([base, tails])),
                     commonality_r2(Y[:, s], np.hstack([base, allq]))))
    return pd.DataFrame(rows, columns=["variable", "F", "F+tails", "F+all"]).set_index("variable")


@dataclass
class ScoreSeries:
    """Per-origin forecasts and losses of a forecast evaluation.

    ``frame`` has columns ``model, variable, quantile, horizon, origin,
    target_date, actual, forecast``; ``loss`` is added on construction.
    """

    frame: pd.DataFrame

    def __post_init__(self):
        if len(self.frame) and "loss" not in self.frame:
            self.frame = self.frame.assign(loss=quantile_score(self.frame["actual"], self.frame["forecast"],
                                                               self.frame["quantile"]))
        elif "loss" not in self.frame:
            self.frame = self.frame.assign(loss=pd.Series(dtype=float))

    def losses(self, model, variable, quantile, horizon):
        f = self.frame
        sel = ((f["model"] == model) & (f["variable"] == variable) & np.isclose(f["quantile"], quantile)
               & (f["horizon"] == horizon))
        return f.loc[sel].sort_values("origin")["loss"].to_numpy()

    def cumulative(self):
        f = self.frame.sort_values(["model", "variable", "quantile", "horizon", "origin"])
        return f.assign(cumulative=f.groupby(["model", "variable", "quantile", "horizon"])["loss"].cumsum())

    def mean_loss(self):
        return self.frame.groupby(["model", "variable", "quantile", "horizon"])["loss"].mean()

    def to_csv(self, path):
        self.cumulative().to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path):
        df = pd.read_csv(path)
        return cls(df.drop(columns=[c for c in ("cumulative",) if c in df]))


def tstat_table(scores, model="QFAVAR", benchmark="FAVAR", quantiles=(0.1, 0.9), horizons=(1, 6, 12, 24)):
    """t-statistics of ``model`` versus ``benchmark`` per variable, quantile and horizon."""
    f = scores.frame
    variables = list(dict.fromkeys(f.loc[f["model"] == model, "variable"]))
    cols = pd.MultiIndex.from_product([quantiles, horizons], names=["quantile", "horizon"])
    out = pd.DataFrame(np.nan, index=pd.Index(variables, name="variable"), columns=cols)
    for v in variables:
        for q in quantiles:
            for h in horizons:
                a = scores.losses(model, v, q, h)
                b = scores.losses(benchmark, v, q, h)
                if a.size == b.size and a.size > 10:
                    out.loc[v, (q, h)] = dm_tstat(a, b, h)
    return out


def format_report(tstats, commonality=None, critical=2.0):
    """Plain-text report; t-statistics with ``|t| > critical`` are wrapped in ``**``."""
    lines = ["t-statistics of equal quantile predictive accuracy", ""]
    qs = list(dict.fromkeys(tstats.columns.get_level_values(0)))
    hs = list(dict.fromkeys(tstats.columns.get_level_values(1)))
    header = "variable".ljust(12) + "".join(
        "".join(f"q={q:g},h={h}".rjust(14) for h in hs) + "  " for q in qs)
    lines.append(header.rstrip())
    for v, row in tstats.iterrows():
        cells = []
        for q in qs:
            for h in hs:
                t = row[(q, h)]
                txt = "nan" if not np.isfinite(t) else (f"**{t:.2f}**" if abs(t) > critical else f"{t:.2f}")
                cells.append(txt.rjust(14))
            cells.append("  ")
        lines.append((str(v).ljust(12) + "".join(cells)).rstrip())
    if commonality is not None:
        lines += ["", "Commonality of factor estimates", ""]
        lines.append("variable".ljust(12) + "".join(c.rjust(10) for c in commonality.columns))
        for v, row in commonality.iterrows():
            lines.append(str(v).ljust(12) + "".join(f"{x:10.3f}" for x in row))
    return "\n".join(lines) + "\n"
