"""The training algorithms on one problem: loss traces and a surrogate function.

Run from the repository root::

    python demos/trainer_traces.py
"""

# %%
import numpy as np

from annensemble import (NetworkConfig, TrainerSpec, TransformSpec, apply_transform,
                         load_csv, surrogate_minimize, train, window)
from annensemble.cli import DATA_DIR

ts = apply_transform(load_csv(DATA_DIR / "lynx.csv"), TransformSpec("log10"))
cfg = NetworkConfig(7, 5, 1)
patterns = window(ts.values[:80], 7, 1)

# %%
# Same seed (so the same random start for the gradient methods), same data; every trainer reports the best loss it reached.
kinds = ["GD_MOMENTUM", "RPROP", "SCG", "BFGS", "OSS", "LM", "PSO_TRELEA1", "PSO_TRELEA2"]
for kind in kinds:
    model = train(TrainerSpec(kind, max_epochs=500), cfg, patterns, seed=0)
    losses = model.trace.losses
    checkpoints = [losses[min(i, len(losses) - 1)] for i in (0, 49, 199, 499)]
    print(f"{kind:12s} epochs {model.trace.epochs:4d}  loss at 1/50/200/500: "
          + " ".join(f"{v:8.4f}" for v in checkpoints) + f"  stop: {model.trace.reason}")

# %%
# The optimisers also run on plain functions: Rosenbrock from (-1.2, 1).
def rosen(x):
    f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return f, g

for kind in ("BFGS", "SCG"):
    m = surrogate_minimize(TrainerSpec(kind, max_epochs=2000), rosen, x0=np.array([-1.2, 1.0]))
    print(f"{kind:5s} x = {np.round(m.x, 6)}  f = {m.loss:.2e}")
