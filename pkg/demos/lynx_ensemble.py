"""Lynx trappings: a seven-trainer ensemble against an AR(12) baseline.

Run from the repository root::

    python demos/lynx_ensemble.py

A reduced budget (3 restarts, 300 epochs) keeps this under a minute; the
bundled ``lynx`` config uses 50 restarts and 2000 epochs.
"""

# %%
# Load the bundled series and move to the log10 working scale.
import numpy as np

from annensemble import (NetworkConfig, ENSEMBLE_KINDS, SplitSpec, TrainerSpec, TransformSpec,
                         apply_transform, fit_ar, forecast_ar, load_csv, metrics, run_ensemble)
from annensemble.cli import DATA_DIR

raw = load_csv(DATA_DIR / "lynx.csv")
ts = apply_transform(raw, TransformSpec("log10"))
spec = SplitSpec(80, 20, 14)
print(f"{len(raw)} values, log10 range {ts.values.min():.2f} to {ts.values.max():.2f}")

# %%
# Train one (7, 5, 1) network per optimiser, weight them on validation,
# refit on train + validation and combine the test forecasts.
trainers = [TrainerSpec(k, max_epochs=300) for k in ENSEMBLE_KINDS]
result = run_ensemble(ts, spec, NetworkConfig(7, 5, 1), trainers, restarts=3, seed=0)
print(result.summary())

# %%
# The weights are exp(1 / (MAE + MSE + MAPE)) on validation, normalised here.
w = result.weights / result.weights.sum()
for name, share in zip(result.labels, w):
    print(f"{name:14s} {share:6.3f}")

# %%
# AR(12) fitted by least squares on the same 100 in-sample points.
ar = fit_ar(ts.values[:100], 12)
ar_pred = forecast_ar(ar, ts.values, 14)
e_ar = metrics(ts.values[100:], ar_pred)
e_ens = result.test_errors()[1]
print(f"AR(12)   MSE {e_ar.mse:.5f}  MAE {e_ar.mae:.5f}")
print(f"ensemble MSE {e_ens.mse:.5f}  MAE {e_ens.mae:.5f}")
print("ensemble better on MSE:", bool(e_ens.mse < e_ar.mse))
