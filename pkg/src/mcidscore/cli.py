"""Command-line entry point: ``mcidscore {estimate,test,bandwidth,simulate}``.

Exit status is 0 on success, 2 for usage or input errors and 3 when a
numerical stage fails. Default tuning constants can be overridden through
the environment:

    MCIDSCORE_DELTA_FIT_SCALE   constant c in delta_fit = c * n**(-1/(2l+1))
    MCIDSCORE_LAMBDA_SCALE      constant in the default penalty level
    MCIDSCORE_H_SCALE           constant of the pilot bias bandwidth h
    MCIDSCORE_G_SCALE           constant of the pilot variance bandwidth g
    MCIDSCORE_B_SCALE           constant of the double-smoothing bandwidth b
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import default_grid, select_bandwidth
from .dataset import DataError, WeightMode, empirical_weights, load_csv
from .decorrelation import DantzigError
from .estimation import cross_validate, default_lambda, fit_penalized
from .inference import (
    InferenceError, TestConfig, VarianceMode, default_delta, linear_combination_test, score_test,
)
from .kernels import make_gaussian_order
from .risk import RiskContext
from .simulation import (
    SCHEMA_VERSION, DGPConfig, Scenario, SimulationError, default_jobs, export_qq_data, get_preset,
    qq_slope, run_monte_carlo, write_qq_csv,
)

ENV_PREFIX = "MCIDSCORE_"
ENV_FIELDS = {
    "DELTA_FIT_SCALE": "delta_fit_scale",
    "LAMBDA_SCALE": "lambda_scale",
    "H_SCALE": "h_scale",
    "G_SCALE": "g_scale",
    "B_SCALE": "b_scale",
}


class UsageError(Exception):
    pass


def _env_overrides() -> dict:
    out = {}
    for suffix, name in ENV_FIELDS.items():
        raw = os.environ.get(ENV_PREFIX + suffix)
        if raw is None:
            continue
        try:
            val = float(raw)
        except ValueError:
            raise UsageError(f"{ENV_PREFIX}{suffix}={raw!r} is not a number") from None
        if not val > 0:
            raise UsageError(f"{ENV_PREFIX}{suffix} must be positive")
        out[name] = val
    return out


def _positive(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not (val > 0 and math.isfinite(val)):
        raise argparse.ArgumentTypeError(f"{text!r} must be a positive number")
    return val


def parse_grid(spec: str) -> np.ndarray:
    """``lo:hi:k`` -> k log-spaced points on [lo, hi]."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid {spec!r} must look like lo:hi:count")
    try:
        lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"grid {spec!r} must look like lo:hi:count") from None
    if not (0 < lo <= hi) or k < 1 or (k == 1 and lo != hi):
        raise UsageError(f"grid {spec!r}: need 0 < lo <= hi and count >= 1")
    return np.geomspace(lo, hi, k)


def parse_cell(spec: str) -> dict:
    allowed = {"n": int, "d": int, "s": int, "rho": float}
    out = {}
    for item in filter(None, (p.strip() for p in spec.split(","))):
        key, sep, val = item.partition("=")
        if not sep or key not in allowed:
            raise UsageError(f"cell entry {item!r}: expected one of {sorted(allowed)} as key=value")
        try:
            out[key] = allowed[key](val)
        except ValueError:
            raise UsageError(f"cell entry {item!r}: bad value") from None
    return out


def _delta_arg(text: str):
    if text in ("auto", "data-driven"):
        return text
    return _positive(text)


def _load(path: str, standardize: bool = False):
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return load_csv(path, standardize=standardize)


def _write_json(payload: dict, path: str | None) -> None:
    text = json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2, default=_json_default)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _test_config(args, **extra) -> TestConfig:
    kw = _env_overrides()
    kw.update(seed=args.seed, weight_mode=args.weights)
    if getattr(args, "lam", None) is not None:
        kw["lam"] = args.lam
    if getattr(args, "lambda_prime", None) is not None:
        kw["lambda_prime"] = args.lambda_prime
    if getattr(args, "variance_mode", None):
        kw["variance_mode"] = args.variance_mode
    if getattr(args, "dantzig", None):
        kw["dantzig_method"] = args.dantzig
    delta = getattr(args, "delta", None)
    if delta == "auto":
        delta = None
    if delta is not None:
        kw["delta"] = delta
    kw.update(extra)
    return TestConfig(**kw)


# Subcommands -----------------------------------------------------------------

def cmd_estimate(args) -> int:
    data = _load(args.data, args.standardize)
    kernel = make_gaussian_order(2)
    weights = empirical_weights(data, args.weights)
    env = _env_overrides()
    payload = {"n": data.n, "d": data.d}
    if args.delta == "auto":
        base = default_delta(data.n)
        delta_grid = [base * c for c in (0.5, 1.0, 2.0, 4.0)]
        lam_grid = sorted({default_lambda(data.n, data.d, base, c) for c in np.geomspace(0.05, 2.0, 8)}
                          if args.lam is None else {args.lam})
        cv = cross_validate(data, delta_grid, lam_grid, folds=args.folds, seed=args.seed, kernel=kernel,
                            weight_mode=args.weights)
        delta, lam = cv.delta, cv.lam
        payload["cross_validation"] = {"delta_grid": cv.delta_grid, "lambda_grid": cv.lambda_grid,
                                       "risk_table": cv.table.tolist(), "selected": [delta, lam]}
    else:
        delta = args.delta or default_delta(data.n, 2, env.get("delta_fit_scale", 2.0))
        lam = args.lam or default_lambda(data.n, data.d, delta, env.get("lambda_scale", 0.2))
    model = fit_penalized(RiskContext.from_dataset(data, weights, kernel, delta), lam)
    payload["model"] = model.to_dict()
    payload["weight_mode"] = WeightMode(args.weights).value
    _write_json(payload, args.out)
    return 0


def _read_contrast(path: str, d: int) -> np.ndarray:
    if not Path(path).is_file():
        raise UsageError(f"contrast file not found: {path}")
    try:
        rows = np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if rows.shape[0] != 1 or rows.shape[1] != d:
        raise UsageError(f"{path}: expected one row of {d} numbers, got shape {rows.shape}")
    return rows[0]


def cmd_test(args) -> int:
    modes = sum([args.coord is not None, args.contrast is not None, args.all_coords])
    if modes != 1:
        raise UsageError("give exactly one of --coord, --contrast or --all-coords")
    data = _load(args.data, args.standardize)
    cfg = _test_config(args)
    if args.all_coords:
        rows = []
        for j in range(1, data.d + 1):
            res = score_test(data, j, cfg)
            p_bonf = min(1.0, res.p_value * data.d)
            rows.append({"coord": j, "statistic": res.statistic, "p_value": res.p_value,
                         "p_bonferroni": p_bonf, "significant_bonferroni": bool(res.p_value < args.alpha / data.d),
                         "delta_used": res.delta_used})
        if args.out and args.out.endswith(".csv"):
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
        else:
            _write_json({"alpha": args.alpha, "bonferroni_divisor": data.d, "rows": rows}, args.out)
        return 0
    if args.contrast is not None:
        res = linear_combination_test(data, _read_contrast(args.contrast, data.d), cfg)
    else:
        if not 1 <= args.coord <= data.d:
            raise UsageError(f"--coord must lie in 1..{data.d}")
        res = score_test(data, args.coord, cfg)
    payload = res.to_dict()
    payload["reject"] = bool(res.p_value < args.alpha)
    payload["alpha"] = args.alpha
    _write_json(payload, args.out)
    return 0


def cmd_bandwidth(args) -> int:
    data = _load(args.data, args.standardize)
    grid = parse_grid(args.grid) if args.grid else default_grid()
    if not 1 <= args.coord <= data.d:
        raise UsageError(f"--coord must lie in 1..{data.d}")
    cfg = _test_config(args)
    sel = select_bandwidth(data, cfg, grid, b=args.b, tested_index=args.coord)
    if args.emit_curves:
        sel.write_curves(args.emit_curves)
    _write_json({"coord": args.coord, **sel.to_dict(include_curves=True)}, args.out)
    return 0


def cmd_simulate(args) -> int:
    grid_b1 = ()
    dgp_kw = {}
    data_driven = False
    if args.preset:
        try:
            preset = get_preset(args.preset)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        dgp_kw = preset.dgp.to_dict()
        grid_b1 = preset.beta1_grid
        data_driven = preset.data_driven
    if args.cell:
        dgp_kw.update(parse_cell(args.cell))
    if args.scenario:
        dgp_kw["scenario"] = Scenario.parse(args.scenario)
    if args.n is not None:
        dgp_kw["n"] = args.n
    if args.beta1 is not None:
        dgp_kw["beta1"] = args.beta1
        grid_b1 = ()
    dgp_kw["freeze_beta"] = args.freeze_beta
    dgp_kw.pop("seed", None)
    dgp_kw.pop("beta_draw_seed", None)
    dgp = DGPConfig(**dgp_kw)
    extra = {"delta": "data-driven"} if data_driven and args.delta is None else {}
    cfg = _test_config(args, **extra)
    jobs = args.threads or default_jobs()
    b1_values = grid_b1 or (dgp.beta1,)
    reports = [run_monte_carlo(dgp.replace(beta1=float(b1)), cfg, args.reps, args.alpha, args.seed, jobs)
               for b1 in b1_values]
    for b1, rep in zip(b1_values, reports):
        print(f"beta1={b1:g}: rejection rate {rep.rejection_rate:.3f} over {rep.completed} replicates "
              f"({rep.wall_time:.1f}s)", file=sys.stderr)
    if len(reports) == 1:
        rep = reports[0]
        payload = rep.to_dict(include_timing=args.timing)
        payload.pop("schema_version")
        if rep.completed:
            qq = export_qq_data(rep)
            payload["qq_slope"] = qq_slope(qq) if rep.completed > 1 else None
            if args.qq:
                write_qq_csv(qq, args.qq)
        if args.csv:
            rep.write_csv(args.csv)
        _write_json(payload, args.out)
    else:
        curve = [{"beta1": float(b1), "rejection_rate": r.rejection_rate, "rejection_se": r.rejection_se,
                  "completed": r.completed} for b1, r in zip(b1_values, reports)]
        if args.csv:
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=list(curve[0]))
                w.writeheader()
                w.writerows(curve)
        body = [{k: v for k, v in r.to_dict(include_timing=args.timing).items() if k != "schema_version"}
                for r in reports]
        _write_json({"power_curve": curve, "reports": body}, args.out)
    return 0


# Parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--data", required=True, help="CSV with columns y,x,z1..zd")
        p.add_argument("--standardize", action="store_true", help="center and scale x and z columns")
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", choices=[m.value for m in WeightMode], default=WeightMode.INVERSE_PROPORTION.value)


def _test_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=_positive, help="penalty level of the initial fits")
    p.add_argument("--lambda-prime", type=_positive, help="Dantzig constraint level")
    p.add_argument("--variance-mode", choices=[m.value for m in VarianceMode])
    p.add_argument("--dantzig", choices=["highs", "admm"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcidscore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit the penalized smoothed estimator")
    _common(p)
    p.add_argument("--delta", type=_delta_arg, help="bandwidth, or 'auto' for cross-validation")
    p.add_argument("--lambda", dest="lam", type=_positive)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="decorrelated score test of a coordinate or contrast")
    _common(p)
    p.add_argument("--coord", type=int, help="1-based coordinate to test")
    p.add_argument("--contrast", help="CSV file holding one row c0 for H0: c0'beta = 0")
    p.add_argument("--all-coords", action="store_true", help="test every coordinate")
    p.add_argument("--delta", type=_delta_arg, help="bandwidth or 'data-driven'")
    p.add_argument("--alpha", type=float, default=0.05)
    _test_options(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bandwidth", help="data-driven bandwidth selection")
    _common(p)
    p.add_argument("--grid", help="lo:hi:count log-spaced grid (default 0.1:1.2:24)")
    p.add_argument("--b", type=_positive, help="double-smoothing bandwidth")
    p.add_argument("--coord", type=int, default=1)
    p.add_argument("--emit-curves", help="write delta,V,B,M columns to this CSV")
    _test_options(p)
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("simulate", help="Monte Carlo reproduction of the simulation studies")
    _common(p, data=False)
    p.add_argument("--preset", help="table1-gaussian, table2-uniform, table4-gaussian, power-gaussian-s10, ...")
    p.add_argument("--cell", help="overrides such as d=100,s=3,rho=0.2")
    p.add_argument("--scenario", help="gaussian or uniform")
    p.add_argument("--n", type=int)
    p.add_argument("--beta1", type=float, help="signal at coordinate 1 before normalization")
    p.add_argument("--reps", type=int, default=250)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    p.add_argument("--freeze-beta", action="store_true", help="draw beta* once for the whole run")
    p.add_argument("--delta", type=_delta_arg)
    p.add_argument("--csv", help="per-replicate statistics, or the power curve for grid presets")
    p.add_argument("--qq", help="QQ pairs CSV")
    p.add_argument("--timing", action="store_true", help="include wall time in the JSON report")
    _test_options(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "alpha", 0.5) is not None and not 0 < getattr(args, "alpha", 0.5) < 1:
            raise UsageError("--alpha must lie in (0, 1)")
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except (UsageError, DataError, FileNotFoundError, IndexError, ValueError) as exc:
        print(f"mcidscore {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (InferenceError, DantzigError, SimulationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"mcidscore {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
