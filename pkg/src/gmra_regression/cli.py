"""Command line entry point: ``gmra-regression {bench,fit,predict}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from .bench import ExperimentConfig, run_experiment, slope_from_csv
from .dataset import load_csv, load_points_csv, save_predictions_csv
from .exceptions import DatasetIOError, ExperimentError, ParameterError
from .regressor import MODES, GMRARegressor, load_model

log = logging.getLogger("gmra_regression")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path} is not valid JSON: {exc}") from exc


def check_acceptance(summary: dict, limits: dict) -> list[str]:
    """Violated limits of a bench summary, as messages.

    ``limits`` may hold ``slope_min``, ``slope_max``, ``mse_max`` (every
    grid mean) and ``seconds_max`` (every grid median total).
    """
    bad = []
    m = summary.get("slope")
    if "slope_min" in limits or "slope_max" in limits:
        if m is None or not math.isfinite(m):
            bad.append(f"slope undefined ({summary.get('slope_note')})")
        else:
            if "slope_min" in limits and m < limits["slope_min"]:
                bad.append(f"slope {m:.4f} < {limits['slope_min']}")
            if "slope_max" in limits and m > limits["slope_max"]:
                bad.append(f"slope {m:.4f} > {limits['slope_max']}")
    if "mse_max" in limits:
        for n, row in summary["mse"].items():
            if row["mean"] > limits["mse_max"]:
                bad.append(f"n={n}: mean MSE {row['mean']:.3g} > {limits['mse_max']}")
    if "seconds_max" in limits:
        for n, row in summary["seconds"].items():
            if row["seconds_total"] > limits["seconds_max"]:
                bad.append(f"n={n}: {row['seconds_total']:.2f}s > {limits['seconds_max']}s")
    return bad


def cmd_bench_run(args) -> int:
    raw = _read_json(args.config)
    limits = raw.pop("acceptance", {}) if isinstance(raw, dict) else {}
    cfg = ExperimentConfig.from_dict(raw)
    report = run_experiment(cfg)
    summary = report.summary()
    if args.csv:
        report.write_csv(args.csv)
    if args.json:
        report.write_json(args.json)
    for n, (mean, std) in report.mse_by_n().items():
        print(f"n={n} mse={mean:.6g} sd={std:.3g}")
    print(f"slope={summary['slope']} s_hat={summary['s_hat']} {summary['slope_note']}".rstrip())
    if args.assert_:
        bad = check_acceptance(summary, limits)
        for msg in bad:
            print(f"FAIL {msg}", file=sys.stderr)
        if bad:
            return 1
        print("acceptance: pass")
    return 0


def cmd_bench_slope(args) -> int:
    fit = slope_from_csv(args.input, args.d)
    print(json.dumps({"slope": fit.m, "s_hat": fit.s_hat, "note": fit.reason}))
    if args.assert_ and fit.m is None:
        return 1
    return 0


def cmd_fit(args) -> int:
    ds = load_csv(args.data)
    reg = GMRARegressor(intrinsic_dim=args.intrinsic_dim, order=args.order, mode=args.mode,
                        kappa=args.kappa, scale=args.scale, s=args.s, mu=args.mu, M=args.M,
                        out_of_support_value=args.out_of_support_value,
                        random_state=args.seed)
    reg.fit(ds.points, ds.labels)
    reg.save(args.out)
    print(f"{args.mode} partition with {reg.n_cells_} cells written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X = load_points_csv(args.points)
    if X.shape[1] != model.charts.centers.shape[1]:
        raise ParameterError(
            f"points have {X.shape[1]} columns, the model expects {model.charts.centers.shape[1]}")
    save_predictions_csv(model.predict(X), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmra-regression",
                                description="Multiscale regression on low-dimensional data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="convergence experiments")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    run = bsub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="experiment JSON")
    run.add_argument("--csv", help="per-run records")
    run.add_argument("--json", help="summary report")
    run.add_argument("--assert", dest="assert_", action="store_true",
                     help="exit 1 when the config's acceptance limits are violated")
    run.set_defaults(func=cmd_bench_run)
    slope = bsub.add_parser("slope", help="fit the log-log slope of a records CSV")
    slope.add_argument("--input", required=True)
    slope.add_argument("--d", type=int, default=1, help="intrinsic dimension for s_hat")
    slope.add_argument("--assert", dest="assert_", action="store_true",
                       help="exit 1 when the slope is undefined")
    slope.set_defaults(func=cmd_bench_slope)

    fit = sub.add_parser("fit", help="fit a model to a labelled CSV")
    fit.add_argument("--data", required=True, help="CSV with header x1..xD,y")
    fit.add_argument("--mode", choices=MODES, default="adaptive")
    fit.add_argument("--order", type=int, choices=(0, 1), default=1)
    fit.add_argument("--intrinsic-dim", "-d", type=int, required=True)
    fit.add_argument("--kappa", type=float)
    fit.add_argument("--mu", type=float, default=1.0)
    fit.add_argument("--s", type=float)
    fit.add_argument("--scale", type=int)
    fit.add_argument("--M", type=float)
    fit.add_argument("--out-of-support-value", type=float, default=0.0)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="model JSON")
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="predict with a saved model")
    pred.add_argument("--model", required=True)
    pred.add_argument("--points", required=True, help="CSV with header x1..xD")
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParameterError, DatasetIOError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
