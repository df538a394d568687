"""Homogeneous neural-network ensembles for univariate time-series forecasting.

One single-hidden-layer network is trained by several optimisers; their
test forecasts are averaged with weights ``exp(1/(MAE+MSE+MAPE))`` taken
from validation errors.
"""

from .series import (ErrorTriple, PatternSet, SplitSpec, TimeSeries, TransformSpec,
                     apply_transform, invert_transform, load_csv, metrics, split, window)
from .mlp import NetworkConfig, forward, init_params
from .trainers import ENSEMBLE_KINDS, TrainerSpec, surrogate_minimize, train
from .ensemble import combine, compute_weight, run_ensemble
from .baselines import fit_ar, fit_sarima_ma, forecast_ar, forecast_sarima

__version__ = "0.1.0"
