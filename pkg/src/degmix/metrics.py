"""Prediction-error scoring at lifetime percentiles.

For each test unit the signal is cut at a fraction of its true lifetime,
the residual-life pipeline is run on the remaining prefix, and the point
prediction is scored against the known remaining life. Errors are relative
squared by default, with an absolute-squared option.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AllCensored, InvalidTruth, IoError
from .estimation import ModelParams
from .prediction import (
    gamma_posterior,
    prior_posterior,
    rld_point_prediction,
    sample_rld,
)
from .signals import truncate_at

DEFAULT_PERCENTILES = (0.1, 0.3, 0.5, 0.7, 0.9)
ERROR_MODES = ("relative", "absolute")


def prediction_error(predicted_rl: float, true_rl: float, mode: str = "relative") -> float:
    """Squared prediction error, relative to the truth by default."""
    if mode not in ERROR_MODES:
        raise ValueError(f"mode must be one of {ERROR_MODES}, got {mode!r}")
    if not true_rl > 0:
        raise InvalidTruth(f"true residual life must be positive, got {true_rl}")
    diff = float(predicted_rl) - float(true_rl)
    if mode == "relative":
        return (diff / float(true_rl)) ** 2
    return diff**2


@dataclass(frozen=True)
class PercentileErrorTable:
    """Per-unit squared errors at each evaluated lifetime percentile."""

    percentiles: tuple[float, ...]
    unit_ids: tuple[str, ...]
    per_unit_errors: np.ndarray  # (units, percentiles)
    mean_errors: np.ndarray
    var_errors: np.ndarray
    method_tag: str

    @classmethod
    def from_errors(cls, percentiles, unit_ids, per_unit_errors, method_tag):
        errors = np.asarray(per_unit_errors, dtype=float)
        if errors.shape != (len(unit_ids), len(percentiles)):
            raise ValueError("error matrix shape must be (units, percentiles)")
        return cls(
            percentiles=tuple(float(p) for p in percentiles),
            unit_ids=tuple(unit_ids),
            per_unit_errors=errors,
            mean_errors=errors.mean(axis=0),
            var_errors=errors.var(axis=0, ddof=1) if errors.shape[0] > 1
            else np.zeros(errors.shape[1]),
            method_tag=method_tag,
        )


def evaluate_cohort(params: ModelParams, signals, lifetimes, *,
                    threshold: float,
                    percentiles=DEFAULT_PERCENTILES,
                    n_draws: int = 2000,
                    seed: int = 0,
                    error_mode: str = "relative",
                    method_tag: str = "model",
                    crossing_grid_size: int = 801,
                    predictor=None) -> PercentileErrorTable:
    """Score residual-life predictions for a cohort with known lifetimes.

    At percentile p the unit's signal is restricted to times <= p * lifetime
    and the prediction is scored against (1 - p) * lifetime. Units with no
    observation before the horizon fall back to the prior-only posterior so
    the table stays rectangular. Each (unit, percentile) cell runs on its
    own seed substream, so evaluations are order-independent.

    ``predictor(unit_index, partial_signal_or_none, horizon)`` may be
    injected in place of the bootstrap pipeline (used for oracle testing).
    """
    if len(signals) != len(lifetimes):
        raise ValueError("signals and lifetimes must be equally long")
    percentiles = tuple(float(p) for p in percentiles)
    if any(not 0 < p < 1 for p in percentiles):
        raise ValueError("percentiles must lie strictly inside (0, 1)")
    for life in lifetimes:
        if not np.isfinite(life) or life <= 0:
            raise InvalidTruth(f"lifetimes must be finite and positive, got {life}")

    n_units = len(signals)
    children = np.random.SeedSequence(seed).spawn(n_units * len(percentiles))
    errors = np.empty((n_units, len(percentiles)))
    for u, (sig, life) in enumerate(zip(signals, lifetimes)):
        for j, p in enumerate(percentiles):
            horizon = p * life
            true_rl = (1.0 - p) * life
            partial = truncate_at(sig, horizon)
            cell_seed = children[u * len(percentiles) + j]
            if predictor is not None:
                predicted = float(predictor(u, partial, horizon))
            else:
                predicted = _bootstrap_point_prediction(
                    params, partial, horizon, threshold, n_draws,
                    crossing_grid_size, cell_seed,
                )
            errors[u, j] = prediction_error(predicted, true_rl, error_mode)
    return PercentileErrorTable.from_errors(
        percentiles, [s.unit_id for s in signals], errors, method_tag
    )


def _bootstrap_point_prediction(params, partial, horizon, threshold, n_draws,
                                crossing_grid_size, seed) -> float:
    if partial is None:
        post = prior_posterior(params, threshold, t_star=horizon)
    else:
        post = gamma_posterior(params, partial, threshold, t_star=horizon)
    samples = sample_rld(post, params.basis, n_draws,
                         crossing_grid_size=crossing_grid_size, seed=seed)
    try:
        return rld_point_prediction(samples)
    except AllCensored:
        # No sampled path crosses within the window; the censoring bound is
        # the only defensible point value.
        return params.basis.domain_end - horizon


def write_error_summary_csv(tables, path) -> None:
    """One row per method, mean error per percentile column."""
    tables = list(tables)
    if not tables:
        raise ValueError("need at least one table")
    percentiles = tables[0].percentiles
    if any(t.percentiles != percentiles for t in tables):
        raise ValueError("all tables must share the same percentiles")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method"] + [f"p{int(round(100 * p))}" for p in percentiles])
            for table in tables:
                writer.writerow([table.method_tag] + [f"{e:.17g}" for e in table.mean_errors])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_error_long_csv(tables, path) -> None:
    """Long-format per-unit errors, one row per (method, unit, percentile)."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "unit_id", "percentile", "error"])
            for table in tables:
                for u, unit in enumerate(table.unit_ids):
                    for j, p in enumerate(table.percentiles):
                        writer.writerow(
                            [table.method_tag, unit, f"{p:.17g}",
                             f"{table.per_unit_errors[u, j]:.17g}"]
                        )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
