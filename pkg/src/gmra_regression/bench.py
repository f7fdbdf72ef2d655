"""Convergence-rate experiments: data generation, fitting, MSE, slopes, timings."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adaptive import compute_deltas
from .dataset import SyntheticSpec, generate, split
from .exceptions import ExperimentError, ParameterError
from .regressor import MODES, GMRARegressor

STAGES = ("tree", "gmra", "fit", "select")


@dataclass
class ExperimentConfig:
    """One experiment: a data recipe, an estimator setting and a grid of sizes.

    ``n_grid`` holds training sizes (tree half plus regression half); each
    run also draws ``n_test`` fresh test points. ``synthetic.n_samples`` is
    ignored.
    """

    synthetic: SyntheticSpec
    n_grid: list
    order: int = 1
    mode: str = "adaptive"
    kappa: float | None = None
    mu: float = 1.0
    s: float | None = None
    scale: int | None = None
    M: float | None = None
    repetitions: int = 1
    seed: int = 0
    n_test: int = 10000

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        self.validate()

    def validate(self):
        if not self.n_grid:
            raise ParameterError("n_grid must not be empty")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ParameterError("n_grid must be strictly increasing")
        if self.n_grid[0] < 4:
            raise ParameterError("every grid size must be at least 4")
        if self.repetitions < 1:
            raise ParameterError("repetitions must be at least 1")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.order not in (0, 1):
            raise ParameterError("order must be 0 or 1")
        if self.n_test < 1:
            raise ParameterError("n_test must be positive")
        self.synthetic.validate()

    def regressor(self, random_state) -> GMRARegressor:
        return GMRARegressor(
            intrinsic_dim=self.synthetic.intrinsic_dim, order=self.order, mode=self.mode,
            kappa=self.kappa, scale=self.scale, s=self.s, mu=self.mu, M=self.M,
            random_state=random_state)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "synthetic"}
        syn = self.synthetic.to_dict()
        syn.pop("n", None)
        out["synthetic"] = syn
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        cfg = dict(cfg)
        try:
            syn = dict(cfg.pop("synthetic"))
            n_grid = cfg.pop("n_grid")
        except KeyError as exc:
            raise ParameterError(f"experiment config is missing key {exc.args[0]!r}") from None
        syn.setdefault("n", 1)
        known = {f for f in cls.__dataclass_fields__} - {"synthetic", "n_grid"}
        unknown = set(cfg) - known
        if unknown:
            raise ParameterError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(synthetic=SyntheticSpec.from_dict(syn), n_grid=n_grid, **cfg)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SlopeFit:
    """Log-log slope ``m`` and the implied regularity; ``None`` when undefined."""

    m: float | None
    s_hat: float | None
    reason: str = ""


@dataclass
class RateReport:
    config: dict
    records: list = field(default_factory=list)

    def ns(self) -> list:
        return sorted({r["n"] for r in self.records})

    def mse_by_n(self) -> dict:
        out = {}
        for n in self.ns():
            v = np.array([r["mse"] for r in self.records if r["n"] == n])
            out[n] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0)
        return out

    def slope(self) -> SlopeFit:
        stats = self.mse_by_n()
        d = self.config["synthetic"]["manifold"].get("d", 2)
        return fit_slope(list(stats), [m for m, _ in stats.values()], d)

    def seconds_by_n(self) -> dict:
        keys = [f"seconds_{s}" for s in STAGES] + ["seconds_total"]
        return {n: {k: float(np.median([r[k] for r in self.records if r["n"] == n]))
                    for k in keys} for n in self.ns()}

    def summary(self) -> dict:
        sl = self.slope()
        return {
            "config": self.config,
            "mse": {str(n): {"mean": m, "std": s} for n, (m, s) in self.mse_by_n().items()},
            "slope": sl.m,
            "s_hat": sl.s_hat,
            "slope_note": sl.reason,
            "seconds": {str(n): v for n, v in self.seconds_by_n().items()},
            "delta_bound_max": max((r["delta_bound"] for r in self.records), default=0.0),
        }

    def write_csv(self, path) -> None:
        cols = ["n", "rep", "mse", "cells"] + [f"seconds_{s}" for s in STAGES] + \
            ["seconds_predict", "seconds_total"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.records:
                w.writerow(r)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def evaluate_mse(estimator, test_points, test_labels) -> float:
    """Mean squared difference between predictions and ``test_labels``."""
    y = np.asarray(test_labels, dtype=float).ravel()
    if y.size == 0:
        raise ParameterError("test set is empty")
    pred = np.asarray(estimator.predict(test_points), dtype=float).ravel()
    if pred.shape != y.shape:
        raise ParameterError("prediction and label counts differ")
    return float(np.mean((pred - y) ** 2))


def fit_slope(ns, mses, d) -> SlopeFit:
    """OLS slope of ``ln mse`` on ``ln n`` and ``s_hat = -m d / (2 (m + 1))``."""
    ns = np.asarray(ns, dtype=float)
    mses = np.asarray(mses, dtype=float)
    if ns.shape != mses.shape:
        raise ParameterError("ns and mses must have equal length")
    if len(ns) < 3:
        return SlopeFit(None, None, "fewer than 3 grid points")
    if np.any(~np.isfinite(mses)) or np.any(mses <= 0):
        return SlopeFit(None, None, "nonpositive MSE")
    m = float(np.polyfit(np.log(ns), np.log(mses), 1)[0])
    if -1.0 < m <= 0.0:
        # + 0.0 turns -0.0 into 0.0
        return SlopeFit(m, -m * d / (2.0 * (m + 1.0)) + 0.0)
    return SlopeFit(m, None, "slope outside (-1, 0]")


def run_seed(seed: int, n: int, rep: int) -> int:
    """Independent seed for one (n, repetition) run."""
    return int(np.random.SeedSequence([int(seed), int(n), int(rep)]).generate_state(1)[0])


def run_single(cfg: ExperimentConfig, n: int, rep: int, synthetic: SyntheticSpec | None = None) -> dict:
    """Generate, split, fit and score one run; returns a record dict."""
    syn = cfg.synthetic if synthetic is None else synthetic
    seed = run_seed(cfg.seed, n, rep)
    total = n + cfg.n_test
    ds = generate(replace(syn, n_samples=total, seed=seed))
    halves = split(total, cfg.n_test / total, seed)
    reg = cfg.regressor(seed)
    t = time.perf_counter()
    reg.fit_halves(ds.points[halves.tree_half], ds.points[halves.regression_half],
                   ds.labels[halves.regression_half])
    fit_seconds = time.perf_counter() - t
    t = time.perf_counter()
    # error against the noiseless target estimates E|f - f_hat|^2
    mse = evaluate_mse(reg, ds.points[halves.test], ds.clean_labels[halves.test])
    predict_seconds = time.perf_counter() - t
    deltas = reg.deltas_
    if deltas is None:
        deltas = compute_deltas(reg.tree_, reg.charts_, reg.fits_,
                                ds.points[halves.regression_half])
    rec = {"n": n, "rep": rep, "mse": mse, "cells": reg.n_cells_,
           "delta_bound": deltas.bound_ratio(reg.M_)}
    for s in STAGES:
        rec[f"seconds_{s}"] = reg.timings_[s]
    rec["seconds_predict"] = predict_seconds
    rec["seconds_total"] = fit_seconds
    rec["_model"] = reg
    return rec


def run_experiment(cfg: ExperimentConfig, keep_models: bool = False) -> RateReport:
    """Every (n, repetition) run of ``cfg``, in grid order."""
    report = RateReport(config=cfg.to_dict())
    for n in cfg.n_grid:
        for rep in range(cfg.repetitions):
            try:
                rec = run_single(cfg, n, rep)
            except Exception as exc:
                raise ExperimentError(str(exc), n=n, rep=rep) from exc
            if not keep_models:
                rec.pop("_model")
            report.records.append(rec)
    return report


def timing_profile(cfg: ExperimentConfig) -> list[dict]:
    """Median per-stage fit seconds for each grid size.

    Each row holds ``n``, ``seconds_<stage>`` and ``seconds_total``; the
    total is the wall-clock of the whole fit, so it bounds the stage sum.
    """
    report = run_experiment(cfg)
    return [{"n": n, **row} for n, row in report.seconds_by_n().items()]


def slope_from_csv(path, d) -> SlopeFit:
    """Slope of a CSV written by :meth:`RateReport.write_csv`."""
    by_n = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                by_n.setdefault(int(row["n"]), []).append(float(row["mse"]))
            except (KeyError, ValueError) as exc:
                raise ParameterError(f"bad rate CSV row {row!r}") from exc
    ns = sorted(by_n)
    return fit_slope(ns, [float(np.mean(by_n[n])) for n in ns], d)
