"""Command-line front end: simulate, fit, predict, evaluate, tune.

Every command records its full configuration and seed next to (or inside)
its artifacts so runs can be reproduced from the outputs alone.
"""

import os

# Honor the thread cap before the numerical stack initializes its pools.
_threads = os.environ.get("PROG_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
from pathlib import Path

from . import errors
from .basis import make_basis
from .estimation import ShrinkageParams, fit, load_params, rand_index, save_params
from .metrics import (
    DEFAULT_PERCENTILES,
    evaluate_cohort,
    write_error_long_csv,
    write_error_summary_csv,
)
from .prediction import gamma_posterior, rld_point_prediction, rld_quantiles, sample_rld
from .signals import (
    SimConfig,
    read_lifetimes_csv,
    read_signals_csv,
    simulate_cohort,
    write_lifetimes_csv,
    write_signals_csv,
)
from .tuning import TuningGrid, cross_validate, write_cv_table_csv

EXIT_CODES = {
    "InvalidDimension": 2,
    "InvalidDomain": 3,
    "OutOfDomain": 4,
    "InvalidConfig": 5,
    "ParseError": 6,
    "InconsistentLabel": 7,
    "NonMonotoneTime": 8,
    "IoError": 9,
    "SingularCovariance": 10,
    "EmptyCluster": 11,
    "LengthMismatch": 12,
    "RejectionOverflow": 13,
    "AllCensored": 14,
    "InsufficientData": 15,
    "InvalidTruth": 16,
}


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _run_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    for key, value in cfg.items():
        if isinstance(value, Path):
            cfg[key] = str(value)
        elif isinstance(value, tuple):
            cfg[key] = list(value)
    return cfg


def _write_sidecar(outdir: Path, args) -> None:
    with open(outdir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(_run_config(args), fh, indent=2)
        fh.write("\n")


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise errors.IoError(f"input file not found: {path}")


def _outdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_cohort_with_truth(signals_path: Path, truth_path: Path):
    _require_file(signals_path)
    _require_file(truth_path)
    signals = read_signals_csv(signals_path)
    truth = read_lifetimes_csv(truth_path)
    missing = [s.unit_id for s in signals if s.unit_id not in truth]
    if missing:
        raise errors.InvalidTruth(f"no lifetime recorded for units: {missing[:5]}")
    return signals, [truth[s.unit_id] for s in signals]


def cmd_simulate(args) -> int:
    outdir = _outdir(args.output)
    cfg = SimConfig(threshold=args.threshold, seed=args.seed, mode=args.mode,
                    domain_end=args.domain_end, n_grid=args.grid_size,
                    sparse_count=args.sparse_count)
    signals, lifetimes = simulate_cohort(cfg, args.n)
    write_signals_csv(signals, outdir / "signals.csv")
    write_lifetimes_csv([s.unit_id for s in signals], lifetimes, outdir / "truth.csv")
    _write_sidecar(outdir, args)
    print(f"wrote {len(signals)} signals to {outdir}")
    return 0


def cmd_fit(args) -> int:
    _require_file(args.input)
    outdir = _outdir(args.output)
    signals = read_signals_csv(args.input)
    basis = make_basis(args.q, args.domain_end)
    report = fit(
        signals, args.k, basis,
        shrink=ShrinkageParams(args.lambda_shrink, args.zeta),
        scenario=args.scenario, init_seed=args.seed,
        max_iter=args.max_iter, tol=args.tol, n_restarts=args.restarts,
    )
    save_params(report.params, outdir / "model.json")
    truth_labels = [s.env_label for s in signals]
    rand = None
    if all(lab is not None for lab in truth_labels):
        rand = rand_index(truth_labels, report.hard_assignments)
    doc = {
        "loglik_trace": report.loglik_trace.tolist(),
        "iterations": report.iterations,
        "converged": report.converged,
        "hard_assignments": {
            s.unit_id: int(k) for s, k in zip(signals, report.hard_assignments)
        },
        "rand_index": rand,
    }
    with open(outdir / "fit_report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_sidecar(outdir, args)
    msg = f"fit {args.k} clusters in {report.iterations} iterations"
    if rand is not None:
        msg += f", rand index {rand:.4f}"
    print(msg)
    return 0


def cmd_predict(args) -> int:
    _require_file(args.input)
    _require_file(args.model)
    params = load_params(args.model)
    signals = read_signals_csv(args.input)
    rows = []
    for idx, sig in enumerate(signals):
        post = gamma_posterior(params, sig, args.threshold)
        samples = sample_rld(post, params.basis, args.nb,
                             crossing_grid_size=args.grid_size,
                             seed=args.seed + idx)
        try:
            point = rld_point_prediction(samples)
            quants = rld_quantiles(samples, args.quantiles)
            quantiles = {f"{p:g}": float(v) for p, v in zip(args.quantiles, quants)}
        except errors.AllCensored:
            point = None
            quantiles = {}
        rows.append({
            "unit_id": sig.unit_id,
            "t_star": float(post.t_star),
            "weights": post.weights.tolist(),
            "point_rl": point,
            "quantiles": quantiles,
            "n_censored": samples.n_censored,
            "n_rejected": samples.n_rejected,
        })
    doc = {"run_config": _run_config(args), "predictions": rows}
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"predicted {len(rows)} units -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    _require_file(args.model)
    params = load_params(args.model)
    signals, lifetimes = _load_cohort_with_truth(args.input, args.truth)
    outdir = _outdir(args.output)
    table = evaluate_cohort(
        params, signals, lifetimes, threshold=args.threshold,
        percentiles=args.percentiles, n_draws=args.nb, seed=args.seed,
        error_mode=args.error, method_tag=args.method_tag,
    )
    write_error_summary_csv([table], outdir / "errors_summary.csv")
    write_error_long_csv([table], outdir / "errors_long.csv")
    _write_sidecar(outdir, args)
    means = ", ".join(f"{p:g}%:{e:.4g}" for p, e in zip(table.percentiles, table.mean_errors))
    print(f"mean {args.error} errors by lifetime percentile: {means}")
    return 0


def cmd_tune(args) -> int:
    signals, lifetimes = _load_cohort_with_truth(args.input, args.truth)
    outdir = _outdir(args.output)
    grid = TuningGrid(
        q_candidates=args.q_candidates,
        k_candidates=args.k_candidates,
        lambda_candidates=args.lambda_candidates,
        zeta_candidates=args.zeta_candidates,
        folds=args.folds,
        eval_percentiles=args.percentiles,
        n_draws=args.nb,
        fit_restarts=args.restarts,
    )
    result = cross_validate(
        signals, lifetimes, grid, scenario=args.scenario, seed=args.seed,
        threshold=args.threshold, domain_end=args.domain_end, error_mode=args.error,
    )
    write_cv_table_csv(result.cv_table, outdir / "cv_table.csv")
    selected = {
        "q": result.q,
        "K": result.k,
        "lambda": result.shrink.lambda_shrink,
        "zeta": result.shrink.zeta,
    }
    with open(outdir / "selected.json", "w", encoding="utf-8") as fh:
        json.dump(selected, fh, indent=2)
        fh.write("\n")
    _write_sidecar(outdir, args)
    print(f"selected q={result.q} K={result.k} "
          f"lambda={result.shrink.lambda_shrink} zeta={result.shrink.zeta}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degmix",
        description="Spline-mixture degradation modeling and residual-life prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a two-cluster study cohort")
    sim.add_argument("--output", type=Path, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--mode", choices=("complete", "sparse"), default="complete")
    sim.add_argument("--threshold", type=float, required=True)
    sim.add_argument("--domain-end", type=float, default=20.0)
    sim.add_argument("--grid-size", type=int, default=81)
    sim.add_argument("--sparse-count", type=int, default=12)
    sim.set_defaults(func=cmd_simulate)

    fit_p = sub.add_parser("fit", help="estimate the mixture from a signals CSV")
    fit_p.add_argument("--input", type=Path, required=True)
    fit_p.add_argument("--output", type=Path, required=True)
    fit_p.add_argument("--scenario", choices=("classification", "clustering"),
                       default="clustering")
    fit_p.add_argument("--k", type=int, required=True)
    fit_p.add_argument("--q", type=int, required=True)
    fit_p.add_argument("--lambda", dest="lambda_shrink", type=float, default=0.0)
    fit_p.add_argument("--zeta", type=float, default=0.0)
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.add_argument("--domain-end", type=float, required=True)
    fit_p.add_argument("--max-iter", type=int, default=500)
    fit_p.add_argument("--tol", type=float, default=1e-6)
    fit_p.add_argument("--restarts", type=int, default=10)
    fit_p.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="residual-life prediction per unit")
    pred.add_argument("--input", type=Path, required=True)
    pred.add_argument("--model", type=Path, required=True)
    pred.add_argument("--output", type=Path, required=True)
    pred.add_argument("--threshold", type=float, required=True)
    pred.add_argument("--nb", type=int, default=2000)
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--grid-size", type=int, default=801)
    pred.add_argument("--quantiles", type=_float_list, default=(0.05, 0.25, 0.5, 0.75, 0.95))
    pred.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="score predictions at lifetime percentiles")
    ev.add_argument("--input", type=Path, required=True)
    ev.add_argument("--truth", type=Path, required=True)
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--output", type=Path, required=True)
    ev.add_argument("--threshold", type=float, required=True)
    ev.add_argument("--percentiles", type=_float_list, default=DEFAULT_PERCENTILES)
    ev.add_argument("--nb", type=int, default=2000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--error", choices=("relative", "absolute"), default="relative")
    ev.add_argument("--method-tag", default="model")
    ev.set_defaults(func=cmd_evaluate)

    tune = sub.add_parser("tune", help="two-step cross-validation of q, K, lambda, zeta")
    tune.add_argument("--input", type=Path, required=True)
    tune.add_argument("--truth", type=Path, required=True)
    tune.add_argument("--output", type=Path, required=True)
    tune.add_argument("--scenario", choices=("classification", "clustering"),
                      default="clustering")
    tune.add_argument("--threshold", type=float, required=True)
    tune.add_argument("--domain-end", type=float, required=True)
    tune.add_argument("--q-candidates", type=_int_list, default=(5, 8, 12))
    tune.add_argument("--k-candidates", type=_int_list, default=(1, 2, 3))
    tune.add_argument("--lambda-candidates", type=_float_list, default=(0.0, 0.25, 0.5))
    tune.add_argument("--zeta-candidates", type=_float_list, default=(0.0, 0.1, 0.5))
    tune.add_argument("--folds", type=int, default=5)
    tune.add_argument("--percentiles", type=_float_list, default=DEFAULT_PERCENTILES)
    tune.add_argument("--nb", type=int, default=300)
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--error", choices=("relative", "absolute"), default="relative")
    tune.add_argument("--restarts", type=int, default=3)
    tune.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.DegmixError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(type(exc).__name__, 1)
    except ValueError as exc:
        print(f"error[ValueError]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
