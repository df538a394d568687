"""Validation-weighted ensemble of one network architecture trained by
several algorithms.

Pipeline (:func:`run_ensemble`):

1. split the series chronologically into training / validation / test;
2. train each algorithm ``restarts`` times on the training windows and keep
   the restart with the smallest validation MAE + MSE + MAPE;
3. turn that validation error into a weight ``exp(1 / (MAE + MSE + MAPE))``;
4. retrain each algorithm on training + validation (fresh restarts, best
   in-sample loss kept) and forecast the test span;
5. average the test forecasts with the weights.
"""

from __future__ import annotations

import logging
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import mlp
from .mlp import NetworkConfig
from .series import (ErrorTriple, SplitSpec, TimeSeries, invert_values, metrics, split,
                     window)
from .trainers import TrainedModel, TrainerSpec, TrainingError, train

__all__ = [
    "G_CLAMP",
    "EnsembleError",
    "TrainerEvaluation",
    "EnsembleResult",
    "compute_weight",
    "combine",
    "derive_seed",
    "run_ensemble",
]

log = logging.getLogger(__name__)

#: Upper bound on 1/(MAE+MSE+MAPE); keeps exp() finite for perfect validation fits.
G_CLAMP = 50.0

PHASE_VALIDATION = 0
PHASE_REFIT = 1


class EnsembleError(RuntimeError):
    pass


def compute_weight(errors: ErrorTriple):
    """Return ``(g, w)`` with ``g = 1/(MAE+MSE+MAPE)`` (at most 50) and ``w = exp(g)``."""
    total = errors.mae + errors.mse + errors.mape
    if min(errors.mae, errors.mse, errors.mape) < 0:
        raise ValueError(f"errors must be non-negative, got {errors}")
    g = G_CLAMP if total <= 1.0 / G_CLAMP else 1.0 / total
    return g, math.exp(g)


def combine(weights, forecasts) -> np.ndarray:
    """Weighted arithmetic mean of equal-length forecast vectors."""
    w = np.asarray(weights, dtype=float)
    F = np.asarray([np.asarray(f, dtype=float) for f in forecasts])
    if w.ndim != 1 or w.size < 1:
        raise ValueError("need at least one weight")
    if F.ndim != 2 or F.shape[0] != w.size:
        raise ValueError(
            f"{w.size} weights but forecasts have shape {F.shape}; lengths must agree")
    if np.any(~(w > 0)):
        raise ValueError("weights must be positive")
    return (w / w.sum()) @ F


def derive_seed(master: int, name: str, phase: int, restart: int) -> int:
    """Independent 64-bit seed for one (trainer, phase, restart) job.

    Keyed on the trainer *name* rather than its position, so adding or
    reordering trainers leaves every other trainer's stream unchanged.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence([int(master), key, int(phase), int(restart)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class TrainerEvaluation:
    name: str
    validation: ErrorTriple
    g: float
    w: float
    restart: int
    seed: int


@dataclass
class EnsembleResult:
    """Everything produced by one ensemble run.

    Per-trainer lists (``names``, ``evaluations``, ``test_forecasts``, ...)
    are aligned by position; a trainer listed twice appears twice. Forecast
    arrays are on the working (fully transformed) scale and
    :meth:`forecasts_at` undoes transforms down to a chosen depth.
    """

    names: list
    evaluations: list
    validation_forecasts: list
    test_forecasts: list
    combined: np.ndarray
    validation_actual: np.ndarray
    test_actual: np.ndarray
    transform_log: tuple
    config: NetworkConfig
    split: SplitSpec
    restarts: int
    seed: int
    refit_choice: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.w for e in self.evaluations])

    @property
    def labels(self) -> list:
        """Unique column labels; repeated names get a ``#k`` suffix."""
        seen, out = {}, []
        for n in self.names:
            seen[n] = seen.get(n, 0) + 1
            out.append(n if seen[n] == 1 else f"{n}#{seen[n]}")
        return out

    def _undo(self, values, depth):
        if depth is None:
            return np.asarray(values, dtype=float)
        return invert_values(values, self.transform_log[depth:])

    def forecasts_at(self, depth: Optional[int] = None):
        """``(actual, combined, [D_i ...])`` keeping only the first ``depth``
        transforms (``0`` = original data, ``None`` = working scale)."""
        return (self._undo(self.test_actual, depth), self._undo(self.combined, depth),
                [self._undo(f, depth) for f in self.test_forecasts])

    def test_errors(self, depth: Optional[int] = None):
        """``(per-trainer ErrorTriples, combined ErrorTriple)``."""
        actual, combined, each = self.forecasts_at(depth)
        return [metrics(actual, f) for f in each], metrics(actual, combined)

    def summary(self, depth: Optional[int] = None) -> str:
        each, comb = self.test_errors(depth)
        lines = [f"{'trainer':14s} {'val_sum':>10s} {'weight':>10s} "
                 f"{'test_MAE':>11s} {'test_MSE':>11s} {'test_MAPE':>10s}"]
        for label, ev, e in zip(self.labels, self.evaluations, each):
            lines.append(f"{label:14s} {ev.validation.total:10.5f} {ev.w:10.5f} "
                         f"{e.mae:11.5g} {e.mse:11.5g} {e.mape:10.5f}")
        lines.append(f"{'ENSEMBLE':14s} {'':>10s} {'':>10s} "
                     f"{comb.mae:11.5g} {comb.mse:11.5g} {comb.mape:10.5f}")
        if self.dropped:
            lines.append(f"dropped: {', '.join(self.dropped)}")
        return "\n".join(lines)


def _forecast(config: NetworkConfig, params, known, actual_span):
    """Forecast ``actual_span`` following ``known`` under the config's protocol."""
    horizon = len(actual_span)
    if config.q == 1:
        return mlp.forecast_one_step(config, params, np.concatenate([known, actual_span]),
                                     horizon)
    return mlp.forecast_seasonal(config, params, known, horizon)


def _job(args):
    spec, config, patterns, seed, init = args
    try:
        return train(spec, config, patterns, seed, init=init)
    except TrainingError as exc:
        return exc


def _run_jobs(jobs, n_jobs):
    if n_jobs and n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    return [_job(j) for j in jobs]


def _best_validation(spec, models, config, train_v, val_v):
    best = None
    for r, m in enumerate(models):
        if isinstance(m, Exception):
            log.warning("%s restart %d failed: %s", spec.name, r, m)
            continue
        fc = _forecast(config, m.params, train_v, val_v)
        if not np.all(np.isfinite(fc)):
            continue
        err = metrics(val_v, fc)
        if best is None or err.total < best[0].total:
            best = (err, r, m, fc)
    return best


def _best_refit(spec, models):
    best = None
    for r, m in enumerate(models):
        if isinstance(m, Exception):
            log.warning("%s refit %d failed: %s", spec.name, r, m)
            continue
        if best is None or m.final_loss < best[1].final_loss:
            best = (r, m)
    return best


def run_ensemble(series: TimeSeries, split_spec: SplitSpec, config: NetworkConfig,
                 trainer_specs: Sequence[TrainerSpec], restarts: int, seed: int,
                 warm_start: bool = False, n_jobs: int = 1) -> EnsembleResult:
    """Run the full train / weight / refit / combine procedure.

    ``series`` is on the working scale (its ``transform_log`` records how to
    get back to the data). A single-output config forecasts one step ahead
    from actual lags; an (s, h, s) config forecasts block by block.
    ``warm_start`` refits once from the parameters picked on validation
    instead of from ``restarts`` fresh random draws.
    """
    specs = list(trainer_specs)
    if not specs:
        raise EnsembleError("need at least one trainer")
    if len(specs) % 2 == 0:
        warnings.warn(f"{len(specs)} trainers: an odd count is preferred", stacklevel=2)
    if restarts < 1:
        raise EnsembleError("restarts must be >= 1")

    train_s, val_s, test_s = split(series, split_spec)
    train_v, val_v, test_v = train_s.values, val_s.values, test_s.values
    insample = np.concatenate([train_v, val_v])
    fit_patterns = window(train_v, config.p, config.q)
    refit_patterns = window(insample, config.p, config.q)

    # validation phase
    jobs = [(s, config, fit_patterns, derive_seed(seed, s.name, PHASE_VALIDATION, r), None)
            for s in specs for r in range(restarts)]
    results = _run_jobs(jobs, n_jobs)
    picked = []
    for i, s in enumerate(specs):
        best = _best_validation(s, results[i * restarts:(i + 1) * restarts],
                                config, train_v, val_v)
        picked.append(best)

    # refit phase on training + validation
    n_refit = 1 if warm_start else restarts
    live = [i for i, b in enumerate(picked) if b is not None]
    jobs = [(specs[i], config, refit_patterns,
             derive_seed(seed, specs[i].name, PHASE_REFIT, r),
             picked[i][2].params if warm_start else None)
            for i in live for r in range(n_refit)]
    results = _run_jobs(jobs, n_jobs)

    names, evs, val_fc, test_fc, refit_choice, dropped = [], [], [], [], [], []
    for i, s in enumerate(specs):
        if picked[i] is None:
            dropped.append(s.name)
            continue
        j = live.index(i)
        best = _best_refit(s, results[j * n_refit:(j + 1) * n_refit])
        if best is None:
            dropped.append(s.name)
            continue
        err, r, m, fc = picked[i]
        g, w = compute_weight(err)
        rr, mm = best
        names.append(s.name)
        evs.append(TrainerEvaluation(s.name, err, g, w, r, m.seed))
        val_fc.append(fc)
        test_fc.append(_forecast(config, mm.params, insample, test_v))
        refit_choice.append({"restart": rr, "seed": mm.seed, "loss": mm.final_loss})

    if not names:
        raise EnsembleError("every trainer failed")
    for n in dropped:
        warnings.warn(f"trainer {n} dropped: all restarts failed", stacklevel=2)
    combined = combine([e.w for e in evs], test_fc)
    return EnsembleResult(
        names=names, evaluations=evs, validation_forecasts=val_fc, test_forecasts=test_fc,
        combined=combined, validation_actual=np.array(val_v), test_actual=np.array(test_v),
        transform_log=series.transform_log, config=config, split=split_spec,
        restarts=restarts, seed=seed, refit_choice=refit_choice, dropped=dropped)
