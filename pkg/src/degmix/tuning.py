"""Two-step cross-validated selection of (q, K) and then (lambda, zeta).

Step 1 scans basis dimension and cluster count under a fixed mild
shrinkage; step 2 fixes the winners and scans the shrinkage weights. Both
steps score each candidate by the mean residual-life prediction error over
signal-level folds and lifetime percentiles.
"""

import csv
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .basis import make_basis
from .errors import EmptyCluster, InsufficientData, IoError, SingularCovariance
from .estimation import ShrinkageParams, fit
from .metrics import DEFAULT_PERCENTILES, evaluate_cohort


@dataclass(frozen=True)
class TuningGrid:
    """Candidate sets and cross-validation controls.

    ``n_draws``, ``fit_restarts`` and ``max_iter`` bound the per-cell cost;
    selection only needs error rankings, not fully polished fits.
    """

    q_candidates: tuple[int, ...]
    k_candidates: tuple[int, ...] = (1,)
    lambda_candidates: tuple[float, ...] = (0.0,)
    zeta_candidates: tuple[float, ...] = (0.0,)
    folds: int = 5
    eval_percentiles: tuple[float, ...] = DEFAULT_PERCENTILES
    default_shrink: ShrinkageParams = field(default_factory=lambda: ShrinkageParams(0.5, 0.1))
    n_draws: int = 300
    fit_restarts: int = 3
    max_iter: int = 200

    def __post_init__(self):
        if not self.q_candidates or any(q < 4 for q in self.q_candidates):
            raise ValueError("q_candidates must be nonempty with every q >= 4")
        if not self.k_candidates or any(k < 1 for k in self.k_candidates):
            raise ValueError("k_candidates must be nonempty with every K >= 1")
        for name, values in (("lambda_candidates", self.lambda_candidates),
                             ("zeta_candidates", self.zeta_candidates)):
            if not values or any(not 0 <= v <= 1 for v in values):
                raise ValueError(f"{name} must be nonempty with values in [0, 1]")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not self.eval_percentiles or any(not 0 < p < 1 for p in self.eval_percentiles):
            raise ValueError("eval_percentiles must lie inside (0, 1)")


@dataclass(frozen=True)
class CvCell:
    q: int
    k: int
    lambda_shrink: float
    zeta: float
    fold: int
    mean_error: float


@dataclass(frozen=True)
class CvResult:
    q: int
    k: int
    shrink: ShrinkageParams
    cv_table: tuple[CvCell, ...]


def _fold_partition(n_units: int, folds: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n_units)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


def _cell_error(cells) -> dict:
    """Mean error per (q, k, lambda, zeta) cell across folds."""
    sums: dict[tuple, list[float]] = {}
    for cell in cells:
        sums.setdefault((cell.q, cell.k, cell.lambda_shrink, cell.zeta), []).append(
            cell.mean_error
        )
    return {key: float(np.mean(vals)) for key, vals in sums.items()}


def cross_validate(signals, lifetimes, grid: TuningGrid, scenario: str = "clustering",
                   seed: int = 0, *, threshold: float, domain_end: float,
                   error_mode: str = "relative"):
    """Select (q, K, lambda, zeta) by two-step signal-level cross-validation.

    Folds partition units (never observations); every unit validates exactly
    once. Step-1 ties prefer smaller q then smaller K; step-2 ties prefer
    larger zeta then larger lambda (more regularization). Cells whose fit
    degenerates (empty cluster, singular covariance) score infinity.

    Returns a CvResult whose ``cv_table`` holds one row per (cell, fold).
    """
    n_units = len(signals)
    if len(lifetimes) != n_units:
        raise ValueError("signals and lifetimes must be equally long")
    if grid.folds > n_units:
        raise InsufficientData(f"{grid.folds} folds exceed {n_units} training units")
    if scenario not in ("classification", "clustering"):
        raise ValueError(f"unknown scenario {scenario!r}")

    if scenario == "classification":
        labels = [s.env_label for s in signals]
        if any(lab is None for lab in labels):
            raise InsufficientData("classification tuning requires labels on every unit")
        k_candidates = (int(max(labels)),)
    else:
        k_candidates = tuple(grid.k_candidates)

    root = np.random.SeedSequence(seed)
    fold_rng = np.random.default_rng(root.spawn(1)[0])
    folds = _fold_partition(n_units, grid.folds, fold_rng)
    signals = list(signals)
    lifetimes = list(lifetimes)

    def run_cells(cells, shrink_of):
        rows = []
        for cell_idx, cell in enumerate(cells):
            q, k, shrink = shrink_of(cell)
            basis = make_basis(q, domain_end)
            for fold_idx, val_units in enumerate(folds):
                mask = np.zeros(n_units, dtype=bool)
                mask[val_units] = True
                train = [s for s, m in zip(signals, mask) if not m]
                test = [s for s, m in zip(signals, mask) if m]
                test_lives = [t for t, m in zip(lifetimes, mask) if m]
                if scenario == "classification":
                    present = {s.env_label for s in train}
                    if present != set(range(1, k + 1)):
                        raise InsufficientData(
                            f"fold {fold_idx} drops a label from the training split"
                        )
                fit_seed, eval_seed = (
                    int(s.generate_state(1)[0])
                    for s in root.spawn(2)
                )
                try:
                    report = fit(
                        train, k, basis, shrink=shrink, scenario=scenario,
                        init_seed=fit_seed, max_iter=grid.max_iter,
                        n_restarts=grid.fit_restarts,
                    )
                    table = evaluate_cohort(
                        report.params, test, test_lives, threshold=threshold,
                        percentiles=grid.eval_percentiles, n_draws=grid.n_draws,
                        seed=eval_seed, error_mode=error_mode,
                    )
                    err = float(table.per_unit_errors.mean())
                except (EmptyCluster, SingularCovariance):
                    err = float("inf")
                rows.append(CvCell(q=q, k=k, lambda_shrink=shrink.lambda_shrink,
                                   zeta=shrink.zeta, fold=fold_idx, mean_error=err))
        return rows

    # Step 1: basis dimension and cluster count under the default shrinkage.
    step1_cells = list(product(grid.q_candidates, k_candidates))
    rows = run_cells(
        step1_cells,
        lambda cell: (cell[0], cell[1], grid.default_shrink),
    )
    means = _cell_error(rows)
    best_q, best_k = min(
        step1_cells,
        key=lambda cell: (
            means[(cell[0], cell[1], grid.default_shrink.lambda_shrink,
                   grid.default_shrink.zeta)],
            cell[0],
            cell[1],
        ),
    )

    # Step 2: shrinkage weights at the selected (q, K).
    step2_cells = list(product(grid.lambda_candidates, grid.zeta_candidates))
    rows2 = run_cells(
        step2_cells,
        lambda cell: (best_q, best_k, ShrinkageParams(cell[0], cell[1])),
    )
    means2 = _cell_error(rows2)
    best_lam, best_zeta = min(
        step2_cells,
        key=lambda cell: (means2[(best_q, best_k, cell[0], cell[1])], -cell[1], -cell[0]),
    )
    return CvResult(
        q=best_q,
        k=best_k,
        shrink=ShrinkageParams(best_lam, best_zeta),
        cv_table=tuple(rows + rows2),
    )


def write_cv_table_csv(cells, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["q", "K", "lambda", "zeta", "fold", "mean_error"])
            for cell in cells:
                writer.writerow([
                    cell.q, cell.k, f"{cell.lambda_shrink:.17g}", f"{cell.zeta:.17g}",
                    cell.fold, f"{cell.mean_error:.17g}",
                ])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
