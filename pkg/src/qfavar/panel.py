"""Panel input/output, series transformations and model configuration.

CSV layout: one date column (``date`` or the first column) followed by one
column per country series named ``INDICATOR.COUNTRY`` and one column per
global series, named either ``GLOBAL.NAME`` or a bare ``NAME``.  Country
series are reordered indicator-major: every country of the first indicator,
then every country of the second, and so on.  Indicators keep their order of
first appearance, countries the order in which they appear for the first
indicator.
"""

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .validation import check_int, check_quantiles

__all__ = [
    "PanelData",
    "TransformSpec",
    "ModelConfig",
    "MCMCSettings",
    "VBSettings",
    "PriorSettings",
    "load_panel",
    "panel_from_frame",
    "write_panel",
    "transform_series",
    "load_config",
    "VARIANTS",
]

VARIANTS = ("QFAVAR", "QDFM", "FAVAR", "QAR", "QAR-X")
TRANSFORMS = ("level", "yoy_log_growth", "mom_log_growth")
_LAGS = {"level": 0, "yoy_log_growth": 12, "mom_log_growth": 1}
_GLOBAL_PREFIX = "GLOBAL."
_MISSING = ("", "NA", "NaN", "nan")


@dataclass(frozen=True)
class PanelData:
    """Balanced multi-country panel plus observed global series.

    ``values`` is ``T x (m*n)`` in indicator-major order and ``globals`` is
    ``T x k``.
    """

    values: np.ndarray
    globals: np.ndarray
    indicator_labels: tuple
    country_labels: tuple
    global_labels: tuple
    time_index: pd.DatetimeIndex

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        glob = np.asarray(self.globals, dtype=float).reshape(vals.shape[0], -1)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "globals", glob)
        object.__setattr__(self, "indicator_labels", tuple(self.indicator_labels))
        object.__setattr__(self, "country_labels", tuple(self.country_labels))
        object.__setattr__(self, "global_labels", tuple(self.global_labels))
        object.__setattr__(self, "time_index", pd.DatetimeIndex(self.time_index))
        m, n = len(self.indicator_labels), len(self.country_labels)
        if vals.ndim != 2 or vals.shape[1] != m * n:
            raise ValueError(f"values must be T x {m * n}, got {vals.shape}")
        if glob.shape[1] != len(self.global_labels):
            raise ValueError("globals do not match global_labels")
        if len(self.time_index) != vals.shape[0]:
            raise ValueError("time_index length does not match the number of periods")
        if not self.time_index.is_monotonic_increasing or not self.time_index.is_unique:
            raise ValueError("time_index must be strictly increasing")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(glob))):
            raise ValueError("panel contains missing or non-finite values")

    @property
    def m(self):
        return len(self.indicator_labels)

    @property
    def n(self):
        return len(self.country_labels)

    @property
    def k(self):
        return len(self.global_labels)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def column_labels(self):
        return [f"{i}.{c}" for i in self.indicator_labels for c in self.country_labels]

    def column_index(self, indicator, country):
        return self.indicator_labels.index(indicator) * self.n + self.country_labels.index(country)

    def block(self, i):
        """``T x n`` array of every country's series for indicator ``i``."""
        return self.values[:, i * self.n:(i + 1) * self.n]

    def unstack(self):
        """Map ``(indicator, country)`` to its column of values."""
        return {(ind, c): self.values[:, self.column_index(ind, c)]
                for ind in self.indicator_labels for c in self.country_labels}

    def to_frame(self):
        df = pd.DataFrame(self.values, index=self.time_index, columns=self.column_labels)
        for name, col in zip(self.global_labels, self.globals.T):
            df[f"{_GLOBAL_PREFIX}{name}"] = col
        df.index.name = "date"
        return df

    def slice(self, start=None, stop=None):
        sl = slice(start, stop)
        return dataclasses.replace(self, values=self.values[sl], globals=self.globals[sl],
                                   time_index=self.time_index[sl])

    def without_globals(self):
        return dataclasses.replace(self, globals=np.zeros((self.T, 0)), global_labels=())

    def select(self, indicators=None, countries=None):
        """Sub-panel restricted to the given indicator and country labels."""
        inds = list(self.indicator_labels if indicators is None else indicators)
        ctrs = list(self.country_labels if countries is None else countries)
        cols = [self.column_index(i, c) for i in inds for c in ctrs]
        return dataclasses.replace(self, values=self.values[:, cols],
                                   indicator_labels=tuple(inds), country_labels=tuple(ctrs))


_MONTH_RE = re.compile(r"^\s*(\d{4})\s*[Mm]\s*(\d{1,2})\s*$")


def _parse_dates(raw):
    raw = pd.Series(raw).astype(str)
    months = raw.str.extract(_MONTH_RE)
    if months.notna().all().all():
        return pd.DatetimeIndex(pd.to_datetime(
            {"year": months[0].astype(int), "month": months[1].astype(int), "day": 1}))
    try:
        return pd.DatetimeIndex(pd.to_datetime(raw, format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise ValueError(f"could not parse the date column: {exc}") from None


def _check_dates(index):
    if not index.is_unique:
        dup = index[index.duplicated()][0]
        raise ValueError(f"ragged dates: {dup.date()} appears more than once")
    if not index.is_monotonic_increasing:
        raise ValueError("ragged dates: the date column is not increasing")
    if len(index) > 1 and all(index.day == 1):
        months = index.year * 12 + index.month
        steps = np.diff(months)
        gaps = np.flatnonzero(steps != 1)
        if gaps.size and np.median(steps) == 1:
            d = index[gaps[0] + 1]
            raise ValueError(f"ragged dates: gap in the monthly sequence before {d.date()}")


def panel_from_frame(df, globals_=None):
    """Build a :class:`PanelData` from a date-indexed DataFrame.

    Parameters
    ----------
    df : DataFrame
        Columns named ``INDICATOR.COUNTRY`` for country series and
        ``GLOBAL.NAME`` (or bare names) for global series.
    globals_ : list of str, optional
        Explicit global series names; when given every other column must be a
        country series.
    """
    country_cols = {}
    global_cols = []
    for col in df.columns:
        name = str(col).strip()
        if globals_ is not None and (name in globals_ or name.removeprefix(_GLOBAL_PREFIX) in globals_):
            global_cols.append((name.removeprefix(_GLOBAL_PREFIX), col))
            continue
        if name.startswith(_GLOBAL_PREFIX):
            gname = name[len(_GLOBAL_PREFIX):]
            if not gname or "." in gname:
                raise ValueError(f"unknown column name {name!r}")
            global_cols.append((gname, col))
            continue
        parts = name.split(".")
        if len(parts) == 1 and globals_ is None and parts[0]:
            global_cols.append((name, col))
        elif len(parts) == 2 and all(parts):
            country_cols.setdefault(parts[0], {})[parts[1]] = col
        else:
            raise ValueError(f"unknown column name {name!r}; expected INDICATOR.COUNTRY or GLOBAL.NAME")
    if not country_cols:
        raise ValueError("no INDICATOR.COUNTRY columns found")
    indicators = list(country_cols)
    countries = list(country_cols[indicators[0]])
    for ind in indicators:
        if set(country_cols[ind]) != set(countries):
            raise ValueError(f"unbalanced panel: indicator {ind!r} has countries "
                             f"{sorted(country_cols[ind])}, expected {sorted(countries)}")
    ordered = [country_cols[i][c] for i in indicators for c in countries]
    frame = df[ordered + [c for _, c in global_cols]]
    missing = frame.isna().to_numpy()
    if missing.any():
        r, c = np.argwhere(missing)[0]
        raise ValueError(f"missing value at row {r} (date {df.index[r]}), column {frame.columns[c]!r}")
    try:
        numeric = frame.to_numpy(dtype=float)
    except ValueError as exc:
        raise ValueError(f"non-numeric entry in the panel: {exc}") from None
    nc = len(ordered)
    return PanelData(numeric[:, :nc], numeric[:, nc:], indicators, countries,
                     [g for g, _ in global_cols], df.index)


def load_panel(csv_path, schema=None):
    """Read a panel CSV.

    ``schema`` may be a dict with optional keys ``date_column`` and
    ``globals`` (list of global series names).
    """
    schema = dict(schema or {})
    df = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    date_col = schema.get("date_column")
    if date_col is None:
        date_col = "date" if "date" in df.columns else df.columns[0]
    if date_col not in df.columns:
        raise ValueError(f"date column {date_col!r} not found")
    index = _parse_dates(df[date_col])
    _check_dates(index)
    body = df.drop(columns=[date_col])
    raw = body.to_numpy(dtype=object)
    values = np.empty(raw.shape)
    # Python float parsing round-trips exactly; pandas' fast parser may not
    for (r, c), cell in np.ndenumerate(raw):
        text = cell.strip()
        if text in _MISSING:
            values[r, c] = np.nan
            continue
        try:
            values[r, c] = float(text)
        except ValueError:
            raise ValueError(f"non-numeric value at row {r}, column {body.columns[c]!r}") from None
    body = pd.DataFrame(values, index=index, columns=body.columns)
    return panel_from_frame(body, schema.get("globals"))


def write_panel(panel, path):
    frame = panel.to_frame()
    frame.index = frame.index.strftime("%Y-%m-%d")
    frame.to_csv(path)


@dataclass
class TransformSpec:
    """Transformation code per series.

    Keys may be an indicator name (applies to every country), a full
    ``INDICATOR.COUNTRY`` label or a global series name.  Unlisted series use
    ``default``.
    """

    codes: dict = field(default_factory=dict)
    default: str = "level"

    def __post_init__(self):
        for key, code in list(self.codes.items()) + [("default", self.default)]:
            if code not in TRANSFORMS:
                raise ValueError(f"unknown transform {code!r} for {key!r}; choose from {TRANSFORMS}")

    def code_for(self, indicator=None, country=None, global_name=None):
        if global_name is not None:
            return self.codes.get(global_name, self.codes.get(f"GLOBAL.{global_name}", self.default))
        return self.codes.get(f"{indicator}.{country}", self.codes.get(indicator, self.default))


def _transform(x, code, label):
    lag = _LAGS[code]
    if lag == 0:
        return x.copy()
    if len(x) < lag + 1:
        raise ValueError(f"{label}: {code} needs at least {lag + 1} observations")
    if np.any(x <= 0):
        raise ValueError(f"{label}: log transform requires strictly positive values")
    out = np.full_like(x, np.nan)
    lx = np.log(x)
    out[lag:] = 100.0 * (lx[lag:] - lx[:-lag])
    return out


def transform_series(panel, spec):
    """Apply per-series transforms and trim every series to the common sample."""
    if isinstance(spec, dict):
        spec = TransformSpec(spec)
    cols, lags = [], [0]
    for i, ind in enumerate(panel.indicator_labels):
        for j, ctry in enumerate(panel.country_labels):
            code = spec.code_for(ind, ctry)
            lags.append(_LAGS[code])
            cols.append(_transform(panel.values[:, i * panel.n + j], code, f"{ind}.{ctry}"))
    gcols = []
    for g, name in enumerate(panel.global_labels):
        code = spec.code_for(global_name=name)
        lags.append(_LAGS[code])
        gcols.append(_transform(panel.globals[:, g], code, name))
    start = max(lags)
    values = np.column_stack(cols)[start:]
    glob = np.column_stack(gcols)[start:] if gcols else np.zeros((panel.T - start, 0))
    return dataclasses.replace(panel, values=values, globals=glob, time_index=panel.time_index[start:])


@dataclass
class MCMCSettings:
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 10
    seed: int = 0


@dataclass
class VBSettings:
    max_iters: int = 500
    tolerance: float = 1e-6
    seed: int = 0
    step1_max_iters: int = 2000
    step1_tolerance: float = 1e-5


@dataclass
class PriorSettings:
    r0: float = 0.01
    s0: float = 0.01
    r_h: float = 0.01
    s_h: float = 0.01
    r_omega: float = 0.01
    s_omega: float = 0.01
    b_phi: float = 1e-4
    b_psi: float = 1e-4
    mu_a: float = 0.0
    sigma_a: float = 10.0
    intercept_var: float = 100.0
    shrinkage: str = "horseshoe"
    ridge_var: float = 1.0
    ridge_var_state: float = 1.0
    init_var: float = 10.0
    sv_init_var: float = 10.0


@dataclass
class ModelConfig:
    """Estimation settings.  Defaults give the three-quantile benchmark."""

    quantiles: tuple = (0.1, 0.5, 0.9)
    p: int = 6
    variant: str = "QFAVAR"
    method: str = "vb"
    include_intercepts: bool = True
    include_own_lag: bool = False
    sv: bool = False
    identify_sign: bool = True
    fix_reference_globals: bool = True
    horizon: int = 24
    filter_explosive: bool = False
    omega_mode: str = "mean"
    priors: PriorSettings = field(default_factory=PriorSettings)
    mcmc: MCMCSettings = field(default_factory=MCMCSettings)
    vb: VBSettings = field(default_factory=VBSettings)

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in check_quantiles(self.quantiles))
        check_int(self.p, "p", 1)
        check_int(self.horizon, "horizon", 1)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.method not in ("vb", "mcmc"):
            raise ValueError(f"method must be 'vb' or 'mcmc', got {self.method!r}")
        if self.omega_mode not in ("mean", "last"):
            raise ValueError("omega_mode must be 'mean' or 'last'")
        if isinstance(self.priors, dict):
            self.priors = PriorSettings(**self.priors)
        if isinstance(self.mcmc, dict):
            self.mcmc = MCMCSettings(**self.mcmc)
        if isinstance(self.vb, dict):
            self.vb = VBSettings(**self.vb)
        if self.priors.shrinkage not in ("horseshoe", "ridge"):
            raise ValueError("priors.shrinkage must be 'horseshoe' or 'ridge'")
        mc = self.mcmc
        check_int(mc.iterations, "mcmc.iterations", 1)
        check_int(mc.burn_in, "mcmc.burn_in", 0)
        check_int(mc.thin, "mcmc.thin", 1)
        if mc.burn_in >= mc.iterations:
            raise ValueError("mcmc.burn_in must be smaller than mcmc.iterations")
        check_int(self.vb.max_iters, "vb.max_iters", 1)
        if not self.vb.tolerance > 0:
            raise ValueError("vb.tolerance must be > 0")

    @property
    def n_draws(self):
        return (self.mcmc.iterations - self.mcmc.burn_in) // self.mcmc.thin

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_config(path):
    """Read a JSON configuration file; an empty file gives the defaults."""
    text = Path(path).read_text(encoding="utf-8").strip()
    data = json.loads(text) if text else {}
    if not isinstance(data, dict):
        raise ValueError("configuration must be a JSON object")
    return ModelConfig.from_dict(data)
