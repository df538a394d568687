"""Experiment runner.

``annensemble run CONFIG`` executes one YAML experiment (series ->
ensemble -> baseline) and writes its report files; ``annensemble compare
REPORT...`` tabulates several runs side by side.

Config keys (see ``configs/*.yaml`` for complete examples)::

    name: lynx
    dataset: lynx.csv            # relative to the config file, else bundled data
    transforms:                  # applied in order; the result is the working scale
      - {kind: log10}
      - {kind: rescale, lo: 0.0, hi: 1.0}   # src_min/src_max default to the training segment
    report_scale: 1              # transforms kept when reporting (0 = original units)
    split: {train: 80, validation: 20, test: 14}
    network: {p: 7, h: 5}        # or  sann: {s: 12, h: 4}
    trainers: [LM, RPROP, {kind: PSO_TRELEA2, hyperparameters: {particles: 30}}]
    restarts: 50
    epochs: 2000
    seed: 0
    baseline: {kind: ar, order: 12}        # or {kind: sarima, period: 12}, or null
    mse_display_scale: 1.0               # e.g. 1.0e-4 for the seasonal series
    warm_start: false
    jobs: 1
    out_dir: runs/lynx                   # relative to the working directory
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import baselines
from .ensemble import EnsembleResult, run_ensemble
from .mlp import NetworkConfig
from .series import (SeriesError, SplitSpec, TimeSeries, TransformSpec, apply_transform,
                     invert_values, load_csv, metrics, split)
from .trainers import ENSEMBLE_KINDS, TrainerSpec, TrainingError

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "DATA_DIR",
    "CONFIG_DIR",
    "load_config",
    "run_experiment",
    "emit_forecast_diagram_data",
    "compare_table",
    "main",
]

log = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
DATA_DIR = PACKAGE_DIR / "data"
CONFIG_DIR = PACKAGE_DIR / "configs"


class ConfigError(ValueError):
    """Invalid experiment config; the message starts with the offending field path."""


def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass
class ExperimentConfig:
    name: str
    dataset: Path
    split: SplitSpec
    network: NetworkConfig
    sann: bool = False
    transforms: list = field(default_factory=list)
    report_scale: int = 0
    trainers: list = field(default_factory=list)
    restarts: int = 50
    epochs: int = 2000
    seed: int = 0
    baseline: Optional[dict] = None
    mse_display_scale: float = 1.0
    warm_start: bool = False
    jobs: int = 1
    out_dir: Path = Path("runs")
    source: Optional[Path] = None

    def echo(self) -> dict:
        """Plain-data form of the resolved config (enough to rerun it exactly)."""
        net = ({"sann": {"s": self.network.p, "h": self.network.h}} if self.sann else
               {"network": {"p": self.network.p, "h": self.network.h}})
        return {
            "name": self.name,
            "dataset": str(self.dataset),
            "transforms": [dict(t) for t in self.transforms],
            "report_scale": self.report_scale,
            "split": {"train": self.split.train_len, "validation": self.split.validation_len,
                      "test": self.split.test_len},
            **net,
            "trainers": [{"kind": t.kind, "name": t.name,
                          "hyperparameters": dict(t.hyperparameters)} for t in self.trainers],
            "restarts": self.restarts,
            "epochs": self.epochs,
            "seed": self.seed,
            "baseline": self.baseline,
            "mse_display_scale": self.mse_display_scale,
            "warm_start": self.warm_start,
            "jobs": self.jobs,
            "out_dir": str(self.out_dir),
        }


def _get(tree, key, path, kind=None, default=...):
    if key not in tree:
        if default is ...:
            raise ConfigError(f"{path}{key}: required field missing")
        return default
    value = tree[key]
    if kind is not None and value is not None:
        try:
            if kind is int and (isinstance(value, bool) or float(value) != int(value)):
                raise ValueError
            value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}{key}: expected {kind.__name__}, got {value!r}") from None
    return value


def _resolve_dataset(name: str, base: Optional[Path]) -> Path:
    p = Path(name)
    candidates = [p] if p.is_absolute() else (
        ([base / p] if base else []) + [Path.cwd() / p, DATA_DIR / p])
    for c in candidates:
        if c.is_file():
            return c.resolve()
    raise ConfigError(f"dataset: file {name!r} not found (looked in "
                      f"{', '.join(str(c.parent) for c in candidates)})")


def _parse_trainers(items, epochs):
    if items is None:
        items = list(ENSEMBLE_KINDS)
    if not isinstance(items, list) or not items:
        raise ConfigError("trainers: expected a non-empty list")
    out = []
    for i, item in enumerate(items):
        path = f"trainers[{i}]"
        if isinstance(item, str):
            item = {"kind": item}
        if not isinstance(item, dict):
            raise ConfigError(f"{path}: expected a kind name or a mapping")
        try:
            out.append(TrainerSpec(
                kind=_get(item, "kind", path + "."),
                hyperparameters=dict(item.get("hyperparameters") or {}),
                max_epochs=int(item.get("epochs", epochs)),
                loss_floor=float(item.get("loss_floor", 0.0)),
                stagnation_window=int(item.get("stagnation_window", 200)),
                name=str(item.get("name", "")),
            ))
        except TrainingError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return out


def parse_config(tree: dict, base: Optional[Path] = None, overrides: Optional[dict] = None
                 ) -> ExperimentConfig:
    """Validate a config tree; ``overrides`` replaces top-level keys first."""
    if not isinstance(tree, dict):
        raise ConfigError("config: expected a mapping at top level")
    tree = {**tree, **{k: v for k, v in (overrides or {}).items() if v is not None}}

    sp = _get(tree, "split", "")
    if not isinstance(sp, dict):
        raise ConfigError("split: expected a mapping with train/validation/test")
    lens = [_get(sp, k, "split.", int) for k in ("train", "validation", "test")]
    for k, v in zip(("train", "validation", "test"), lens):
        if v < 1:
            raise ConfigError(f"split.{k}: must be >= 1, got {v}")
    split_spec = SplitSpec(*lens)

    if "sann" in tree and "network" in tree:
        raise ConfigError("network/sann: give exactly one of the two")
    if "sann" in tree:
        net = tree["sann"] or {}
        s = _get(net, "s", "sann.", int)
        h = _get(net, "h", "sann.", int, 4)
        if "p" in net or "q" in net:
            if net.get("p", s) != s or net.get("q", s) != s:
                raise ConfigError("sann: p and q must both equal s")
        network, sann = NetworkConfig(s, h, s), True
    else:
        net = _get(tree, "network", "")
        q = _get(net, "q", "network.", int, 1)
        if q != 1:
            raise ConfigError("network.q: multi-output networks need the sann block")
        try:
            network = NetworkConfig(_get(net, "p", "network.", int), _get(net, "h", "network.", int), 1)
        except ValueError as exc:
            raise ConfigError(f"network: {exc}") from None
        sann = False

    transforms = tree.get("transforms") or []
    for i, t in enumerate(transforms):
        if not isinstance(t, dict) or t.get("kind") not in ("log10", "rescale"):
            raise ConfigError(f"transforms[{i}].kind: expected 'log10' or 'rescale'")
    report_scale = _get(tree, "report_scale", "", int, 0)
    if not 0 <= report_scale <= len(transforms):
        raise ConfigError(f"report_scale: must be between 0 and {len(transforms)}")

    baseline = tree.get("baseline")
    if baseline:
        kind = baseline.get("kind")
        if kind == "ar":
            _get(baseline, "order", "baseline.", int)
        elif kind == "sarima":
            _get(baseline, "period", "baseline.", int)
        else:
            raise ConfigError("baseline.kind: expected 'ar' or 'sarima'")

    epochs = _get(tree, "epochs", "", int, 2000)
    if epochs < 1:
        raise ConfigError("epochs: must be >= 1")
    restarts = _get(tree, "restarts", "", int, 50)
    if restarts < 1:
        raise ConfigError("restarts: must be >= 1")
    name = str(tree.get("name") or "experiment")
    return ExperimentConfig(
        name=name,
        dataset=_resolve_dataset(str(_get(tree, "dataset", "")), base),
        split=split_spec,
        network=network,
        sann=sann,
        transforms=[dict(t) for t in transforms],
        report_scale=report_scale,
        trainers=_parse_trainers(tree.get("trainers"), epochs),
        restarts=restarts,
        epochs=epochs,
        seed=_get(tree, "seed", "", int, 0),
        baseline=dict(baseline) if baseline else None,
        mse_display_scale=_get(tree, "mse_display_scale", "", float, 1.0),
        warm_start=bool(tree.get("warm_start", False)),
        jobs=_get(tree, "jobs", "", int, 1),
        out_dir=Path(tree.get("out_dir") or Path("runs") / name),
        source=base,
    )


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML config. A bare name such as ``lynx`` selects a bundled config."""
    p = Path(path)
    if not p.is_file() and (CONFIG_DIR / f"{path}.yaml").is_file():
        p = CONFIG_DIR / f"{path}.yaml"
    if not p.is_file():
        raise ConfigError(f"config: file {str(path)!r} not found")
    with open(p, encoding="utf-8") as fh:
        tree = yaml.safe_load(fh)
    return parse_config(tree, p.resolve().parent, overrides)


def _working_series(cfg: ExperimentConfig, raw: TimeSeries) -> TimeSeries:
    series = raw
    for i, t in enumerate(cfg.transforms):
        try:
            if t["kind"] == "log10":
                spec = TransformSpec("log10")
            else:
                lo, hi = float(t.get("lo", 0.0)), float(t.get("hi", 1.0))
                if "src_min" in t or "src_max" in t:
                    spec = TransformSpec("rescale", float(t["src_min"]), float(t["src_max"]),
                                         lo, hi)
                else:
                    spec = TransformSpec.rescale_from(
                        series.values[:cfg.split.train_len], lo, hi)
            series = apply_transform(series, spec)
        except (SeriesError, KeyError) as exc:
            raise ConfigError(f"transforms[{i}]: {exc}") from None
    return series


@dataclass
class BaselineRun:
    label: str
    params: dict
    forecast: np.ndarray  # working scale


@dataclass
class RunReport:
    config: ExperimentConfig
    result: EnsembleResult
    baseline: Optional[BaselineRun]
    timings: dict
    files: dict = field(default_factory=dict)

    def scales(self) -> dict:
        """Named transform depths reported: ``report`` and ``original``."""
        return {"report": self.config.report_scale, "original": 0}

    def errors(self, depth: int) -> dict:
        """``{label: ErrorTriple}`` for every trainer, the ensemble and the baseline."""
        each, comb = self.result.test_errors(depth)
        out = dict(zip(self.result.labels, each))
        out["ENSEMBLE"] = comb
        if self.baseline is not None:
            actual = self.result.forecasts_at(depth)[0]
            fc = invert_values(self.baseline.forecast, self.result.transform_log[depth:])
            out[self.baseline.label] = metrics(actual, fc)
        return out

    def to_dict(self) -> dict:
        res = self.result
        return {
            "config": self.config.echo(),
            "weights": [{"trainer": l, "g": e.g, "w": e.w, **e.validation.as_dict()}
                        for l, e in zip(res.labels, res.evaluations)],
            "errors": {scale: {k: v.as_dict() for k, v in self.errors(d).items()}
                       for scale, d in self.scales().items()},
            "baseline": None if self.baseline is None else
            {"label": self.baseline.label, "params": self.baseline.params},
            "dropped": list(res.dropped),
            "timings": self.timings,
        }


def _fit_baseline(cfg: ExperimentConfig, series: TimeSeries) -> Optional[BaselineRun]:
    if not cfg.baseline:
        return None
    n_in = cfg.split.train_len + cfg.split.validation_len
    y = series.values
    h = cfg.split.test_len
    if cfg.baseline["kind"] == "ar":
        order = int(cfg.baseline["order"])
        model = baselines.fit_ar(y[:n_in], order)
        fc = baselines.forecast_ar(model, y, h)
        return BaselineRun(f"AR({order})", {"intercept": model.intercept,
                                              "coefficients": model.coefficients.tolist(),
                                              "sigma2": model.sigma2}, fc)
    s = int(cfg.baseline["period"])
    model = baselines.fit_sarima_ma(y[:n_in], s)
    fc = baselines.forecast_sarima(model, y, h)
    return BaselineRun(f"SARIMA(0,1,1)x(0,1,1){s}",
                       {"theta": model.theta, "seasonal_theta": model.seasonal_theta,
                        "sigma2": model.sigma2}, fc)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _forecast_table(result: EnsembleResult, depth: int) -> str:
    actual, combined, each = result.forecasts_at(depth)
    start = result.split.train_len + result.split.validation_len + 1
    rows = []
    for i in range(actual.size):
        rows.append([start + i, _fmt(actual[i]), _fmt(combined[i])] +
                    [_fmt(f[i]) for f in each])
    return _csv_text(["index", "actual", "combined"] + result.labels, rows)


def emit_forecast_diagram_data(result: EnsembleResult, path, depth: int = 0) -> Path:
    """Write actual / combined / per-trainer test forecasts as CSV (original units by default)."""
    path = Path(path)
    _atomic_write(path, _forecast_table(result, depth))
    return path


def _write_outputs(report: RunReport) -> dict:
    cfg, res = report.config, report.result
    out = cfg.out_dir
    files = {}

    rows = []
    for scale, depth in report.scales().items():
        for label, e in report.errors(depth).items():
            rows.append([label, scale, _fmt(e.mae), _fmt(e.mse), _fmt(e.mape)])
    files["errors.csv"] = _csv_text(["model", "scale", "mae", "mse", "mape"], rows)

    files["weights.csv"] = _csv_text(
        ["trainer", "val_mae", "val_mse", "val_mape", "g", "weight", "val_restart", "val_seed",
         "refit_restart", "refit_seed", "refit_loss"],
        [[l, _fmt(e.validation.mae), _fmt(e.validation.mse), _fmt(e.validation.mape),
          _fmt(e.g), _fmt(e.w), e.restart, e.seed, rc["restart"], rc["seed"], _fmt(rc["loss"])]
         for l, e, rc in zip(res.labels, res.evaluations, res.refit_choice)])

    rep_each = res.test_errors(cfg.report_scale)[0]
    org_each = res.test_errors(0)[0]
    files["trainer_mape.csv"] = _csv_text(
        ["trainer", "test_mape_report_scale", "test_mape_original"],
        [[l, _fmt(a.mape), _fmt(b.mape)] for l, a, b in zip(res.labels, rep_each, org_each)])

    files["forecasts.csv"] = _forecast_table(res, 0)
    files["forecasts_report.csv"] = _forecast_table(res, cfg.report_scale)

    if report.baseline is not None:
        start = cfg.split.train_len + cfg.split.validation_len + 1
        tail = res.transform_log
        rep = cfg.report_scale
        a_r = invert_values(res.test_actual, tail[rep:])
        f_r = invert_values(report.baseline.forecast, tail[rep:])
        a_o = invert_values(res.test_actual, tail)
        f_o = invert_values(report.baseline.forecast, tail)
        files["baseline.csv"] = _csv_text(
            ["index", "actual_report", "forecast_report", "actual_original", "forecast_original"],
            [[start + i, _fmt(a_r[i]), _fmt(f_r[i]), _fmt(a_o[i]), _fmt(f_o[i])]
             for i in range(a_r.size)])

    for name, text in files.items():
        _atomic_write(out / name, text)
    _atomic_write(out / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _atomic_write(out / "report.txt", _report_text(report))
    return {name: out / name for name in list(files) + ["report.json", "report.txt"]}


def _report_text(report: RunReport) -> str:
    cfg, res = report.config, report.result
    lines = [f"experiment: {cfg.name}", "", "config:",
             yaml.safe_dump(cfg.echo(), sort_keys=False).rstrip(), ""]
    for scale, depth in report.scales().items():
        lines.append(f"test errors ({scale} scale, {depth} transform(s) kept):")
        lines.append(res.summary(depth))
        if report.baseline is not None:
            e = report.errors(depth)[report.baseline.label]
            lines.append(f"{report.baseline.label}: MAE {e.mae:.5g}  MSE {e.mse:.5g}  "
                         f"MAPE {e.mape:.5f}")
        lines.append("")
    lines.append("timings (s): " + ", ".join(f"{k}={v:.1f}" for k, v in report.timings.items()))
    return "\n".join(lines) + "\n"


def run_experiment(config, overrides: Optional[dict] = None, write: bool = True) -> RunReport:
    """Run one experiment from a config path/name or a parsed config."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config, overrides)
    t0 = time.perf_counter()
    raw = load_csv(cfg.dataset)
    if len(raw) != cfg.split.total:
        raise ConfigError(
            f"split.train + split.validation + split.test = {cfg.split.total} "
            f"but {cfg.dataset.name} has {len(raw)} observations")
    series = _working_series(cfg, raw)
    t1 = time.perf_counter()
    result = run_ensemble(series, cfg.split, cfg.network, cfg.trainers, cfg.restarts, cfg.seed,
                          warm_start=cfg.warm_start, n_jobs=cfg.jobs)
    t2 = time.perf_counter()
    base = _fit_baseline(cfg, series)
    t3 = time.perf_counter()
    report = RunReport(cfg, result, base,
                       {"load": t1 - t0, "ensemble": t2 - t1, "baseline": t3 - t2})
    if write:
        report.files = _write_outputs(report)
    return report


def _load_report(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


def compare_table(reports, path=None, scaled: bool = True, trainers: bool = False) -> str:
    """Dataset x {MSE, MAPE} table of baseline vs ensemble errors (report scale).

    ``reports`` are RunReports, report dicts, or paths to ``report.json`` /
    run directories. With ``scaled`` each MSE is multiplied by the run's
    ``mse_display_scale``.
    """
    dicts = []
    for r in reports:
        if isinstance(r, RunReport):
            r = json.loads(json.dumps(r.to_dict()))
        elif not isinstance(r, dict):
            r = _load_report(r)
        dicts.append(r)
    if not dicts:
        raise ValueError("need at least one report")
    extra = []
    if trainers:
        for d in dicts:
            for w in d["weights"]:
                if w["trainer"] not in extra:
                    extra.append(w["trainer"])
    rows = []
    for d in dicts:
        errs = d["errors"]["report"]
        base = d["baseline"]["label"] if d.get("baseline") else None
        factor = float(d["config"].get("mse_display_scale", 1.0)) if scaled else 1.0
        for metric in ("mse", "mape"):
            scale = factor if metric == "mse" else 1.0
            row = [d["config"]["name"], metric.upper(),
                   _fmt(errs[base][metric] * scale) if base else "",
                   _fmt(errs["ENSEMBLE"][metric] * scale)]
            row += [_fmt(errs[t][metric] * scale) if t in errs else "" for t in extra]
            rows.append(row)
    text = _csv_text(["dataset", "metric", "ARIMA", "Ensemble"] + extra, rows)
    if path is not None:
        _atomic_write(Path(path), text)
    return text


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="annensemble", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("config", help="YAML config path, or a bundled name (lynx, sunspot, ...)")
    run.add_argument("--seed", type=int)
    run.add_argument("--restarts", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--out-dir")
    run.add_argument("--jobs", type=int)
    cmp_ = sub.add_parser("compare", help="side-by-side comparison of finished runs")
    cmp_.add_argument("reports", nargs="+", help="report.json files or run directories")
    cmp_.add_argument("--out", help="write the table to this CSV file")
    cmp_.add_argument("--raw-mse", action="store_true", help="do not apply mse_display_scale")
    cmp_.add_argument("--trainers", action="store_true", help="add one column per trainer")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            overrides = {"seed": args.seed, "restarts": args.restarts, "epochs": args.epochs,
                         "out_dir": args.out_dir, "jobs": args.jobs}
            report = run_experiment(args.config, overrides)
            sys.stdout.write(_report_text(report))
            sys.stdout.write(f"wrote {len(report.files)} files to {report.config.out_dir}\n")
        else:
            sys.stdout.write(compare_table(args.reports, args.out, scaled=not args.raw_mse,
                                           trainers=args.trainers))
    except (ConfigError, SeriesError, baselines.BaselineError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
