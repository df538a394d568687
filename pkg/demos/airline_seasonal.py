"""Airline passengers: a seasonal (12, h, 12) network forecasting a year at once.

Run from the repository root::

    python demos/airline_seasonal.py

The whole last year is predicted from the year before it, with no actual
values from inside the test span.
"""

# %%
import numpy as np

from annensemble import (NetworkConfig, ENSEMBLE_KINDS, SplitSpec, TrainerSpec, TransformSpec,
                         apply_transform, fit_sarima_ma, forecast_sarima, load_csv, metrics,
                         run_ensemble)
from annensemble.cli import DATA_DIR

raw = load_csv(DATA_DIR / "airline.csv")
spec = SplitSpec(120, 12, 12)
log = apply_transform(raw, TransformSpec("log10"))
ts = apply_transform(log, TransformSpec.rescale_from(log.values[:spec.train_len], 0.0, 1.0))

# %%
# Three fast trainers keep the demo short; the bundled config runs all seven.
kinds = [k for k in ENSEMBLE_KINDS if k in ("RPROP", "SCG", "BFGS")]
trainers = [TrainerSpec(k, max_epochs=300) for k in kinds]
result = run_ensemble(ts, spec, NetworkConfig(12, 4, 12), trainers, restarts=2, seed=0)
actual, combined, each = result.forecasts_at(0)
print(result.summary(0))

# %%
# SARIMA(0,1,1)x(0,1,1)12 on the log scale, the classical airline model.
model = fit_sarima_ma(log.values[:132], s=12)
sarima = 10.0 ** forecast_sarima(model, log.values, 12)
print(f"theta {model.theta:.3f}  Theta {model.seasonal_theta:.3f}")
print(f"SARIMA   MAPE {metrics(actual, sarima).mape:.3f}")
print(f"ensemble MAPE {metrics(actual, combined).mape:.3f}")

# %%
# Month by month, in passengers (thousands).
for m, (a, c, s) in enumerate(zip(actual, combined, sarima), start=1):
    print(f"{m:2d} {a:6.0f} {c:8.1f} {s:8.1f}")
