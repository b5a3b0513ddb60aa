"""Bayesian quantile factor-augmented vector autoregressions."""

__version__ = "0.1.0"

from .distributions import ALParams, al_density, al_mixture_draw, al_quantile, gig_draw, gig_moments, mixture_constants
from .estimator import QFAVAR
from .evaluate import commonality_r2, dm_tstat, quantile_score
from .forecast import density_from_quantiles, forecast_fan, forecast_quantiles, forecast_states, recursive_poos
from .gibbs import run_gibbs
from .io import load_posterior, save_posterior
from .model import PosteriorDraws
from .panel import ModelConfig, PanelData, TransformSpec, load_config, load_panel, transform_series
from .qar import fit_qar
from .simulate import GroundTruth, SimulationSettings, simulate_qfavar
from .structural import connectedness, gfevd, girf, project_to_measurement, variable_fevd
from .vb import run_vb

__all__ = [
    "ALParams", "GroundTruth", "ModelConfig", "PanelData", "PosteriorDraws", "QFAVAR", "SimulationSettings",
    "TransformSpec", "al_density", "al_mixture_draw", "al_quantile", "commonality_r2", "connectedness",
    "density_from_quantiles", "dm_tstat", "fit_qar", "forecast_fan", "forecast_quantiles", "forecast_states",
    "gfevd", "gig_draw", "gig_moments", "girf", "load_config", "load_panel", "load_posterior",
    "mixture_constants", "project_to_measurement", "quantile_score", "recursive_poos", "run_gibbs", "run_vb",
    "save_posterior", "simulate_qfavar", "transform_series", "variable_fevd",
]
