"""Command-line entry points.

Subcommands::

    unlearn-cli gen                  synthesize a dataset (CSV or binary + sidecar)
    unlearn-cli fit                  fit the regularized GLM objective
    unlearn-cli unlearn              calibrate, Newton-update, and randomize
    unlearn-cli experiment run       sweep a (n, p, m, eps, mechanism) grid
    unlearn-cli experiment summarize aggregate a results CSV, optional slope fits
    unlearn-cli certify curve        write an analytic trade-off curve
    unlearn-cli certify gpar         check gaps against a calibrated radius

Config files are JSON or simple ``key = value`` lines (values parsed as
JSON fragments).  ``UNLEARN_THREADS`` overrides ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .certify import TradeoffCurve, check_gpar, eps_delta_tradeoff, gaussian_tradeoff
from .data import load_binary, load_csv
from .datagen import DataGenSpec, generate_dataset, save_dataset
from .harness import (
    ExperimentConfig,
    run_experiment,
    slope_fits,
    summarize,
)
from .losses import ModelSpec
from .solver import SolverConfig, fit_rerm
from .unlearn import (
    InfeasibleBudget,
    RemovalRequest,
    calibrate_noise,
    uniform_subsets,
    unlearn,
)

__all__ = ["main", "load_config"]


def load_config(path) -> dict:
    """Parse a JSON config, falling back to ``key = value`` lines."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    cfg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = key.strip(), val.strip()
        try:
            cfg[key] = json.loads(val)
        except json.JSONDecodeError:
            cfg[key] = val.strip("\"'")
    return cfg


def _load_dataset(path: str):
    p = Path(path)
    if p.suffix == ".bin":
        return load_binary(p)
    meta = p.with_name(p.name + ".meta.json")
    beta_star = None
    if meta.exists():
        beta_star = json.load(meta.open()).get("beta_star")
    return load_csv(p, beta_star=beta_star)


def _threads(args) -> int:
    env = os.environ.get("UNLEARN_THREADS")
    if env is not None:
        return max(1, int(env))
    return max(1, getattr(args, "threads", 1) or 1)


def _cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = DataGenSpec.from_dict(cfg)
    dataset = generate_dataset(spec)
    save_dataset(dataset, args.out, spec=spec)
    print(f"wrote {args.out} (n={dataset.n}, p={dataset.p}) + sidecar")
    return 0


def _solver_cfg(cfg: dict) -> SolverConfig:
    kwargs = {}
    for key in ("grad_tol", "max_iter", "line_search", "ridge_jitter"):
        if key in cfg:
            kwargs[key] = cfg[key]
    return SolverConfig(**kwargs)


def _cmd_fit(args) -> int:
    cfg = load_config(args.model)
    model = ModelSpec.from_dict(cfg)
    data = _load_dataset(args.data)
    fitted = fit_rerm(model, data, cfg=_solver_cfg(cfg))
    out = {
        "beta": fitted.beta.tolist(),
        "grad_norm": fitted.grad_norm,
        "iterations": fitted.iterations,
        "n": data.n,
        "p": data.p,
        "excluded": sorted(fitted.excluded),
    }
    Path(args.out).write_text(json.dumps(out) + "\n")
    print(f"fit converged in {fitted.iterations} iterations; wrote {args.out}")
    return 0


def _cmd_unlearn(args) -> int:
    cfg = load_config(args.model)
    model = ModelSpec.from_dict(cfg)
    data = _load_dataset(args.data)
    removal = RemovalRequest(int(i) for i in args.indices.split(","))
    removal.validate_for(data.n)
    if removal.m == 0:
        raise SystemExit("--indices must name at least one row")
    solver_cfg = _solver_cfg(cfg)
    fitted = fit_rerm(model, data, cfg=solver_cfg)
    calib = calibrate_noise(
        model,
        data,
        fitted,
        m=removal.m,
        eps=args.eps,
        mode=args.mode,
        sampler=uniform_subsets(args.subsets),
        rng=args.seed,
        solver_cfg=solver_cfg,
        threads=_threads(args),
    )
    result = unlearn(
        fitted,
        model,
        data,
        removal,
        calib,
        kind=args.mechanism,
        rng=np.random.default_rng(args.seed),
    )
    out = {
        "calibration": calib.to_json_dict(),
        "removed_indices": list(removal.indices),
        "beta_newton": result.beta_newton.tolist(),
        "beta_tilde": result.beta_tilde.tolist(),
        "noise": result.noise.tolist(),
    }
    Path(args.out).write_text(json.dumps(out) + "\n")
    print(
        f"unlearned {removal.m} rows: r={calib.r:.6g}, sigma={calib.sigma:.6g}; "
        f"wrote {args.out}"
    )
    return 0


def _cmd_experiment_run(args) -> int:
    cfg_dict = load_config(args.config)
    if args.out is not None:
        cfg_dict["output_path"] = args.out
    if args.seed is not None:
        cfg_dict["master_seed"] = args.seed
    cfg_dict["threads"] = _threads(args)
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        rows = run_experiment(cfg, resume=args.resume, progress=not args.quiet)
    except InfeasibleBudget as exc:
        print(f"stopped early: {exc}; partial results kept", file=sys.stderr)
        return 2
    print(f"wrote {len(rows)} rows to {cfg.output_path}")
    return 0


def _cmd_experiment_summarize(args) -> int:
    summary = summarize(args.csv)
    summary.to_csv(args.out, index=False)
    print(f"wrote {args.out} ({len(summary)} cells)")
    for axis in args.axis or []:
        fits = slope_fits(summary, axis=axis, metric=args.metric)
        slope_path = Path(args.out).with_suffix(f".slopes_{axis}.csv")
        fits.to_csv(slope_path, index=False)
        print(f"wrote {slope_path} ({len(fits)} fits)")
    return 0


def _cmd_certify_curve(args) -> int:
    alphas = np.linspace(0.0, 1.0, args.grid)
    if args.kind == "gaussian":
        curve = TradeoffCurve(
            alphas, gaussian_tradeoff(args.eps, alphas), "analytic_gaussian"
        )
    else:
        curve = TradeoffCurve(
            alphas,
            eps_delta_tradeoff(args.eps, args.delta, alphas),
            "analytic_eps_delta",
        )
    curve.save_csv(args.out)
    print(f"wrote {args.out} ({args.grid} grid points)")
    return 0


def _read_gaps(path: str) -> np.ndarray:
    gaps = []
    for line in Path(path).read_text().splitlines():
        first = line.split(",")[0].strip()
        if not first:
            continue
        try:
            gaps.append(float(first))
        except ValueError:
            continue  # header line
    if not gaps:
        raise SystemExit(f"no numeric gaps found in {path}")
    return np.asarray(gaps)


def _cmd_certify_gpar(args) -> int:
    report = check_gpar(
        _read_gaps(args.gaps),
        r=args.r,
        phi_budget=args.phi_budget,
        eps=args.eps,
        sigma=args.sigma,
    )
    report.save_json(args.out)
    verdict = "pass" if report.passed else "FAIL"
    print(
        f"{verdict}: {report.violations}/{report.trials} violations "
        f"(phi_hat={report.phi_hat:.4g}, budget={report.phi_budget}); wrote {args.out}"
    )
    return 0 if report.passed else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unlearn-cli",
        description="Certified one-step Newton unlearning for regularized GLMs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--config", required=True, help="DataGenSpec config file")
    gen.add_argument("--out", required=True, help="output .csv or .bin path")
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(func=_cmd_gen)

    fit = sub.add_parser("fit", help="fit the regularized objective")
    fit.add_argument("--data", required=True)
    fit.add_argument("--model", required=True, help="model config file")
    fit.add_argument("--out", required=True, help="output JSON path")
    fit.set_defaults(func=_cmd_fit)

    unl = sub.add_parser("unlearn", help="remove rows via noisy one-step Newton")
    unl.add_argument("--data", required=True)
    unl.add_argument("--model", required=True)
    unl.add_argument("--indices", required=True, help="comma-separated row indices")
    unl.add_argument("--eps", type=float, default=0.75)
    unl.add_argument("--mode", choices=("oracle", "theory"), default="oracle")
    unl.add_argument(
        "--mechanism",
        choices=("gaussian", "laplace_isotropic", "none"),
        default="gaussian",
    )
    unl.add_argument("--subsets", type=int, default=1000, help="m>1 oracle scan size")
    unl.add_argument("--seed", type=int, default=0)
    unl.add_argument("--threads", type=int, default=1)
    unl.add_argument("--out", required=True)
    unl.set_defaults(func=_cmd_unlearn)

    exp = sub.add_parser("experiment", help="grid experiments")
    exp_sub = exp.add_subparsers(dest="subcommand", required=True)

    run = exp_sub.add_parser("run", help="run a grid experiment")
    run.add_argument("--config", required=True, help="ExperimentConfig file")
    run.add_argument("--out", default=None, help="override output_path")
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--resume", action="store_true")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=_cmd_experiment_run)

    summ = exp_sub.add_parser("summarize", help="aggregate a results CSV")
    summ.add_argument("--csv", required=True)
    summ.add_argument("--out", required=True)
    summ.add_argument(
        "--axis",
        action="append",
        choices=("p", "m"),
        help="also fit log-log slopes along this axis (repeatable)",
    )
    summ.add_argument("--metric", default="ged", choices=("ged", "ued"))
    summ.set_defaults(func=_cmd_experiment_summarize)

    cert = sub.add_parser("certify", help="trade-off curves and radius checks")
    cert_sub = cert.add_subparsers(dest="subcommand", required=True)

    curve = cert_sub.add_parser("curve", help="write an analytic trade-off curve")
    curve.add_argument("--kind", choices=("gaussian", "eps_delta"), default="gaussian")
    curve.add_argument("--eps", type=float, required=True)
    curve.add_argument("--delta", type=float, default=0.0)
    curve.add_argument("--grid", type=int, default=1001)
    curve.add_argument("--out", required=True)
    curve.set_defaults(func=_cmd_certify_curve)

    gpar = cert_sub.add_parser("gpar", help="check gaps against a radius")
    gpar.add_argument("--gaps", required=True, help="file with one gap per line")
    gpar.add_argument("--r", type=float, required=True)
    gpar.add_argument("--phi-budget", dest="phi_budget", type=float, default=0.05)
    gpar.add_argument("--eps", type=float, default=None)
    gpar.add_argument("--sigma", type=float, default=None)
    gpar.add_argument("--out", required=True)
    gpar.set_defaults(func=_cmd_certify_gpar)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
