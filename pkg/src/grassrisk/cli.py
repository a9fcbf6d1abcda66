"""Command-line interface: ``grassrisk {analyze,simulate,verify,spiked,graph}``.

Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure (including a
failed verification suite).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GrassriskError, NumericalError, ValidationError
from .models import (
    DatasetModel,
    EdgeGraphModel,
    GaussianModel,
    SpikedModel,
    edge_graph_fourth_moments,
    load_dataset,
    make_rng,
    model_from_config,
)
from .moments import (
    MaxDeviationEstimator,
    asymptotic_law,
    dimension_factor,
    empirical_fourth_moments,
    gaussian_closed_forms,
    gaussian_fourth_moments,
    gaussian_matrix_variance,
    matrix_variance_from_data,
    nonasymptotic_bound,
    projector_quantile_band,
    quantile_band,
    sample_size_threshold,
    spiked_fourth_moments,
    spiked_reference_variances,
    variance_param_nu,
    variance_param_v,
)
from .montecarlo import clt_report, concordance_suite, geometry_suite, risk_quantile_report, run_trials

GEOMETRY_TOLS = ("roundtrip", "metric", "isometry", "horizontal", "speed", "invariance", "velocity",
                 "hessian_symmetry", "third_bound", "lipschitz", "two_paths")
CONCORDANCE_TOLS = ("margin", "sandwich", "small_angle")


class UsageError(ValidationError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _flatten(obj, prefix="") -> list[tuple[str, str]]:
    if isinstance(obj, dict):
        out = []
        for k, v in obj.items():
            out.extend(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(obj, list):
        if all(not isinstance(v, (dict, list)) for v in obj):
            return [(prefix, ";".join(map(repr, obj)))]
        out = []
        for i, v in enumerate(obj):
            out.extend(_flatten(v, f"{prefix}[{i}]"))
        return out
    return [(prefix, repr(obj) if isinstance(obj, float) else str(obj))]


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        from .errors import IoError

        raise IoError(f"cannot write {out}: {exc}") from exc


def _write_report(args, report: dict, csv_lines: list[str] | None = None) -> None:
    report = _jsonable(report)
    if args.format == "json":
        _emit(json.dumps(report, indent=2, sort_keys=False) + "\n", args.out)
    elif csv_lines is not None:
        _emit("\n".join(csv_lines) + "\n", args.out)
    else:
        rows = ["key,value"] + [f"{k},{v}" for k, v in _flatten(report)]
        _emit("\n".join(rows) + "\n", args.out)


def _tolerances(args, allowed) -> dict:
    tol = {}
    for item in args.tol or []:
        name, _, val = item.partition("=")
        if name not in allowed or not val:
            raise UsageError(f"unknown tolerance override {item!r}; known: {', '.join(allowed)}")
        try:
            tol[name] = float(val)
        except ValueError as exc:
            raise UsageError(f"tolerance {name} needs a number, got {val!r}") from exc
    return tol


def _metadata(args, start: float, extra: dict | None = None) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    meta = {"command": args.command, "config": cfg, "seed": args.seed, "version": __version__}
    if extra:
        meta["config"].update(extra)
    if not args.no_timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat()
        meta["wall_clock_seconds"] = time.perf_counter() - start
    return meta


def _model_from_args(args):
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            cfg = json.loads(path.read_text())
        except OSError as exc:
            from .errors import IoError

            raise IoError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            from .errors import ParseError

            raise ParseError(f"{path}: {exc}") from exc
        return model_from_config(cfg, path.parent), cfg
    if getattr(args, "eigenvalues", None):
        return GaussianModel(np.diag(args.eigenvalues)), {"kind": "gaussian", "eigenvalues": args.eigenvalues}
    if getattr(args, "covariance", None):
        sigma = load_dataset(args.covariance, "csv")
        return GaussianModel(sigma), {"kind": "gaussian", "covariance_file": args.covariance}
    if getattr(args, "data", None):
        return DatasetModel(load_dataset(args.data, None, args.header), args.data), {"kind": "dataset", "path": args.data}
    raise UsageError("a model is required: use --config, --eigenvalues, --covariance or --data")


def _tensors(model, k: int):
    spec = model.spectral_model(k)
    if isinstance(model, GaussianModel):
        return gaussian_fourth_moments(spec), spec
    if isinstance(model, SpikedModel):
        return spiked_fourth_moments(model.eta, model.sigma, model.d, model.latent)
    if isinstance(model, DatasetModel):
        return empirical_fourth_moments(model.data, spec), spec
    if isinstance(model, EdgeGraphModel):
        return edge_graph_fourth_moments(model.weights, k)
    raise UsageError(f"unsupported model {type(model).__name__}")


def _law_block(law) -> dict:
    return {
        "mean_h_sq": law.mean_h_sq,
        "mean_excess": law.mean_excess,
        "tau_sq": law.tau_sq,
        "tau_sq_g": law.tau_sq_g,
        "g_cov": law.flat("g"),
        "h_cov": law.flat("h"),
    }


def _bands(law, deltas) -> list[dict]:
    out = []
    for d in deltas:
        b, p = quantile_band(law, d), projector_quantile_band(law, d)
        out.append({"delta": d, "excess": {"lower": b.lower, "upper": b.upper, "center": b.center},
                    "projector": {"lower": p.lower, "upper": p.upper, "center": p.center}})
    return out


def _analysis(args, model, k: int) -> dict:
    tensors, spec = _tensors(model, k)
    spec.require_gap()
    law = asymptotic_law(spec, tensors)
    report = {
        "model": {"eigenvalues": spec.eigenvalues, "k": spec.k, "gap": spec.gap, "tensor_source": tensors.source},
        "law": _law_block(law),
        "bands": _bands(law, args.delta),
    }
    if getattr(args, "n", None):
        report["nonasymptotic_bound"] = {
            "n": args.n, "delta": args.threshold_delta,
            "bound": nonasymptotic_bound(law, args.n, args.threshold_delta),
        }
    if tensors.gamma is None:
        report["variance_params"] = None
        return report
    v = variance_param_v(spec, tensors)
    nu = variance_param_nu(spec, tensors, restarts=args.restarts, seed=args.seed)
    report["variance_params"] = {
        "v_big": v.value, "v_certificate": v.certificate,
        "nu": nu.value, "nu_certificate": nu.certificate,
        "nu_is_heuristic": nu.is_heuristic, "nu_converged": nu.converged,
    }
    if isinstance(model, GaussianModel):
        cv, cn = gaussian_closed_forms(spec)
        report["variance_params"]["closed_form"] = {"v_big": cv, "nu": cn}
    if args.threshold and hasattr(model, "sample"):
        report["threshold"] = _threshold(args, model, spec, v.value, nu.value, law)
    return report


def _threshold(args, model, spec, v_big, nu, law) -> dict:
    delta = args.threshold_delta
    sigma = spec.matrix
    if isinstance(model, GaussianModel):
        s_var, s_source = gaussian_matrix_variance(spec), "analytic"
    else:
        data = model.sample(args.mc_budget, make_rng(args.seed, 1))
        s_var, s_source = matrix_variance_from_data(data, sigma), f"monte_carlo({args.mc_budget})"
    s_param = dimension_factor(spec.d) * s_var
    r_of_n = MaxDeviationEstimator(model.sample, sigma, replicates=args.mc_replicates, seed=args.seed)
    res = sample_size_threshold(spec, v_big, nu, s_param, r_of_n, delta)
    return {
        "delta": delta, "n_star": res.n_star, "iterations": res.iterations,
        "log_term_v": res.log_term_v, "log_term_nu": res.log_term_nu,
        "concentration_term": res.concentration_term, "r_at_n_star": res.r_at_n_star,
        "s_param": s_param, "s_source": s_source,
        "r_budget": {"replicates": args.mc_replicates, "seed": args.seed},
        "bound_at_n_star": nonasymptotic_bound(law, res.n_star, delta),
    }


def _simulation(args, model, k: int) -> tuple[dict, object]:
    tensors, spec = _tensors(model, k)
    law = asymptotic_law(spec, tensors)
    summary = run_trials(model, args.n, args.trials, args.seed, k, jobs=args.jobs)
    block = summary.to_dict(timing=not args.no_timestamp)
    block["law"] = {"mean_excess": law.mean_excess, "mean_h_sq": law.mean_h_sq, "g_cov": law.flat("g")}
    defined = summary.trials - summary.undefined_log_count
    block["clt"] = clt_report(summary, law).to_dict() if defined >= 100 else None
    block["quantiles"] = [q.to_dict() for q in risk_quantile_report(summary, law, args.delta)]
    block["nonasymptotic_bound"] = [
        {"delta": d, "bound": nonasymptotic_bound(law, args.n, d)} for d in args.delta
    ]
    return block, summary


def cmd_analyze(args) -> int:
    start = time.perf_counter()
    model, cfg = _model_from_args(args)
    report = _analysis(args, model, args.k)
    _write_report(args, {**_metadata(args, start, {"model": cfg}), **report})
    return 0


def _check_sim_args(args) -> None:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.n < 1:
        raise UsageError("--n must be at least 1")


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    _check_sim_args(args)
    model, cfg = _model_from_args(args)
    block, summary = _simulation(args, model, args.k)
    _write_report(args, {**_metadata(args, start, {"model": cfg}), "simulation": block}, summary.csv_rows()
                  if args.format == "csv" else None)
    return 0


def cmd_verify(args) -> int:
    start = time.perf_counter()
    geo_tol = _tolerances(args, GEOMETRY_TOLS + CONCORDANCE_TOLS)
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be at least 1")
    g_trials = args.trials or 500
    c_trials = args.trials or 1000
    geo = geometry_suite(args.seed, g_trials, tolerances={k: v for k, v in geo_tol.items() if k in GEOMETRY_TOLS})
    con = concordance_suite(args.seed, c_trials,
                            tolerances={k: v for k, v in geo_tol.items() if k in CONCORDANCE_TOLS})
    passed = geo.passed and con.passed
    report = {**_metadata(args, start, {"tolerance_overrides": geo_tol}), "passed": passed,
              "suites": [geo.to_dict(), con.to_dict()]}
    _write_report(args, report)
    return 0 if passed else 3


def cmd_spiked(args) -> int:
    start = time.perf_counter()
    model = SpikedModel(tuple(args.eta), args.sigma, args.d, args.latent)
    k = len(args.eta)
    report = _analysis(args, model, k)
    g_ref, h_ref = spiked_reference_variances(args.eta, args.sigma)
    report["reference_formulas"] = {"g_variance": g_ref, "h_variance": h_ref}
    if args.trials:
        _check_sim_args(args)
        report["simulation"], _ = _simulation(args, model, k)
    _write_report(args, {**_metadata(args, start, {"model": model.config()}), **report})
    return 0


def cmd_graph(args) -> int:
    start = time.perf_counter()
    if args.config:
        model, cfg = _model_from_args(args)
        if not isinstance(model, EdgeGraphModel):
            raise UsageError("graph command needs an edge_graph config")
    elif args.weights:
        model = EdgeGraphModel(load_dataset(args.weights, None))
        cfg = {"kind": "edge_graph", "weights_file": args.weights}
    else:
        raise UsageError("a weight matrix is required: use --weights or --config")
    report = _analysis(args, model, args.k)
    if args.trials:
        _check_sim_args(args)
        report["simulation"], _ = _simulation(args, model, args.k)
    _write_report(args, {**_metadata(args, start, {"model": cfg}), **report})
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="run seed (default: $GRASSRISK_SEED or 0)")
    p.add_argument("--out", default=None, help="output file (default: standard output)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help="worker processes for trials")
    p.add_argument("--no-timestamp", action="store_true", help="omit timestamps and timings for byte-stable output")
    p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON model config")
    p.add_argument("--eigenvalues", type=_floats, help="Gaussian model with diagonal covariance")
    p.add_argument("--covariance", help="Gaussian model with covariance read from CSV")
    p.add_argument("--data", help="dataset (CSV or JSON), resampled with replacement")
    p.add_argument("--header", action="store_true", help="skip the first CSV row")


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=_floats, default=[0.05, 0.02], help="levels for the quantile bands")
    p.add_argument("--restarts", type=int, default=64)
    p.add_argument("--threshold", action=argparse.BooleanOptionalAction, default=True,
                   help="compute the sample-size threshold")
    p.add_argument("--threshold-delta", type=float, default=0.1)
    p.add_argument("--mc-replicates", type=int, default=200)
    p.add_argument("--mc-budget", type=int, default=100_000)


def _sim_flags(p: argparse.ArgumentParser, trials_default: int) -> None:
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--trials", type=int, default=trials_default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grassrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"grassrisk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="asymptotic law, bands, variance parameters and threshold")
    _common(p), _model_flags(p), _analysis_flags(p)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--n", type=int, default=10_000, help="sample size for the finite-sample bound")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte Carlo trials compared with the limit law")
    _common(p), _model_flags(p)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--delta", type=_floats, default=[0.05, 0.02])
    _sim_flags(p, 2000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="randomized geometry and self-concordance suites")
    _common(p)
    p.add_argument("--trials", type=int, default=None, help="instances per suite (default 500 and 1000)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("spiked", help="spiked covariance model: law, reference formulas, optional simulation")
    _common(p), _analysis_flags(p)
    p.add_argument("--eta", type=_floats, required=True, help="spike strengths, non-increasing")
    p.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--latent", choices=("gaussian", "rademacher"), default="gaussian")
    _sim_flags(p, 0)
    p.set_defaults(func=cmd_spiked)

    p = sub.add_parser("graph", help="edge-sampling model on a weighted graph")
    _common(p), _analysis_flags(p)
    p.add_argument("--weights", help="symmetric weight matrix (CSV or JSON)")
    p.add_argument("--config", help="JSON config with kind edge_graph")
    p.add_argument("-k", type=int, required=True)
    _sim_flags(p, 0)
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get("GRASSRISK_SEED")
        try:
            args.seed = int(env) if env is not None else 0
        except ValueError:
            parser.error(f"GRASSRISK_SEED must be an integer, got {env!r}")
    if getattr(args, "tol", None) and args.command != "verify":
        parser.error("--tol overrides apply to the verify command")
    for name in ("delta",):
        vals = getattr(args, name, None)
        if vals is not None and not all(math.isfinite(v) for v in vals):
            parser.error("--delta values must be finite")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"grassrisk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, GrassriskError) as exc:
        print(f"grassrisk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
