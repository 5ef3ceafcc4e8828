"""Degradation-signal data model, the two-cluster simulation study, and CSV I/O.

A signal is one unit's time-stamped amplitude record. Units stop reporting
once the amplitude first reaches the failure threshold, so stored signals
carry at most one observation at or above the threshold (the crossing one).
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import design_matrix, make_basis
from .errors import (
    InconsistentLabel,
    InvalidConfig,
    IoError,
    NonMonotoneTime,
    ParseError,
)

CSV_HEADER = ("unit_id", "time", "value", "env")
TRUTH_HEADER = ("unit_id", "lifetime")


@dataclass(frozen=True)
class DegradationSignal:
    """One unit's observations, optionally tagged with its environment label.

    ``truncated`` records whether observation stopped because the unit hit
    the failure threshold.
    """

    unit_id: str
    times: np.ndarray
    values: np.ndarray
    env_label: int | None = None
    truncated: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).copy()
        values = np.asarray(self.values, dtype=float).copy()
        if times.ndim != 1 or values.ndim != 1 or times.size != values.size:
            raise ValueError("times and values must be 1-D and equally long")
        if times.size < 1:
            raise ValueError("a signal needs at least one observation")
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneTime(f"unit {self.unit_id}: times must be strictly increasing")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.times.size


def truncate_at(signal: DegradationSignal, horizon: float):
    """Restrict a signal to observations at times <= horizon.

    Returns None when no observation survives.
    """
    keep = signal.times <= horizon
    if not keep.any():
        return None
    return DegradationSignal(
        unit_id=signal.unit_id,
        times=signal.times[keep],
        values=signal.values[keep],
        env_label=signal.env_label,
        truncated=False,
    )


def mark_truncation(signals, threshold: float):
    """Recompute truncation flags of parsed signals against a threshold."""
    return [
        DegradationSignal(
            unit_id=s.unit_id,
            times=s.times,
            values=s.values,
            env_label=s.env_label,
            truncated=bool(np.any(s.values >= threshold)),
        )
        for s in signals
    ]


# ---------------------------------------------------------------------------
# Two-cluster simulation study
# ---------------------------------------------------------------------------


def _walk_penalty_matrix(dim: int) -> np.ndarray:
    """First-difference penalty plus a unit anchor on the first coefficient."""
    omega = 2.0 * np.eye(dim)
    omega[-1, -1] = 1.0
    idx = np.arange(dim - 1)
    omega[idx, idx + 1] = -1.0
    omega[idx + 1, idx] = -1.0
    return omega


def _accelerating_mean(t: np.ndarray) -> np.ndarray:
    """Mean degradation trend of cluster 1: 4 t^2 exp(t / 25)."""
    return 4.0 * t**2 * np.exp(t / 25.0)


@dataclass(frozen=True)
class SimConfig:
    """Generator settings for the built-in two-cluster degradation study.

    Cluster 1 follows an accelerating trend with a per-unit quadratic random
    effect; cluster 2 draws spline coefficients around a linear mean trend
    from a random-walk prior. Both add i.i.d. Gaussian noise and truncate at
    the failure threshold.
    """

    threshold: float
    seed: int
    mode: str = "complete"
    n_grid: int = 81
    domain_end: float = 20.0
    sparse_count: int = 12
    cluster_probs: tuple[float, float] = (0.5, 0.5)
    noise_sd: tuple[float, float] = (60.0, 80.0)
    beta_sd: float = 1.5
    basis_dim: int = 5
    mean_coeffs: tuple[float, ...] = (0.0, 500.0, 1500.0, 2500.0, 3000.0)
    precision_scale: float = 5600.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise InvalidConfig("threshold must be > 0")
        if self.mode not in ("complete", "sparse"):
            raise InvalidConfig(f"mode must be 'complete' or 'sparse', got {self.mode!r}")
        if self.n_grid < 2 or not self.domain_end > 0:
            raise InvalidConfig("grid needs >= 2 points on a positive domain")
        if not (0 < self.sparse_count <= self.n_grid):
            raise InvalidConfig("sparse_count must be in 1..n_grid")
        probs = np.asarray(self.cluster_probs, dtype=float)
        if probs.size != 2 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidConfig("cluster_probs must be two nonnegative values summing to 1")
        if any(s < 0 for s in self.noise_sd) or self.beta_sd < 0:
            raise InvalidConfig("noise and random-effect SDs must be >= 0")
        if len(self.mean_coeffs) != self.basis_dim:
            raise InvalidConfig("mean_coeffs length must equal basis_dim")
        if not self.precision_scale > 0:
            raise InvalidConfig("precision_scale must be > 0")
        omega = _walk_penalty_matrix(self.basis_dim)
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            raise InvalidConfig("coefficient precision matrix is not positive definite")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.domain_end, self.n_grid)

    def coefficient_covariance(self) -> np.ndarray:
        """Covariance of the cluster-2 coefficient prior."""
        omega = _walk_penalty_matrix(self.basis_dim)
        return self.precision_scale * np.linalg.inv(omega)


def simulate_cohort(cfg: SimConfig, n_units: int):
    """Generate a cohort of truncated signals plus each unit's true lifetime.

    The lifetime is the first full-grid time at which the generated (noisy)
    amplitude reaches the threshold; units whose path never crosses within
    the window get an infinite lifetime and are left untruncated.

    Per-unit draws come from seed substreams spawned in unit order, and
    within a unit the draw order is fixed (membership, coefficients, noise,
    then sparse sampling indices), so cohorts are reproducible bit for bit.
    """
    if n_units < 1:
        raise ValueError("n_units must be >= 1")
    grid = cfg.grid
    basis = make_basis(cfg.basis_dim, cfg.domain_end)
    bgrid = design_matrix(basis, grid)
    mean_coeffs = np.asarray(cfg.mean_coeffs, dtype=float)
    chol = np.linalg.cholesky(cfg.coefficient_covariance())
    width = max(4, len(str(n_units)))

    signals: list[DegradationSignal] = []
    lifetimes: list[float] = []
    for idx, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(n_units)):
        rng = np.random.default_rng(child)
        cluster = 1 if rng.random() < cfg.cluster_probs[0] else 2
        if cluster == 1:
            beta = rng.normal(0.0, cfg.beta_sd)
            latent = _accelerating_mean(grid) + beta * grid**2
            noise = rng.normal(0.0, cfg.noise_sd[0], cfg.n_grid)
        else:
            gamma = mean_coeffs + chol @ rng.standard_normal(cfg.basis_dim)
            latent = bgrid @ gamma
            noise = rng.normal(0.0, cfg.noise_sd[1], cfg.n_grid)
        amplitude = latent + noise

        crossed = amplitude >= cfg.threshold
        if crossed.any():
            cut = int(np.argmax(crossed))
            lifetime = float(grid[cut])
            truncated = True
        else:
            cut = cfg.n_grid - 1
            lifetime = math.inf
            truncated = False

        if cfg.mode == "complete":
            keep = np.arange(cut + 1)
        else:
            keep = _sparse_indices(rng, cfg, cut)

        signals.append(
            DegradationSignal(
                unit_id=f"u{idx + 1:0{width}d}",
                times=grid[keep],
                values=amplitude[keep],
                env_label=cluster,
                truncated=truncated,
            )
        )
        lifetimes.append(lifetime)
    return signals, lifetimes


def _sparse_indices(rng, cfg: SimConfig, cut: int) -> np.ndarray:
    """Sample the sparse observation grid, redrawing if truncation empties it."""
    for _ in range(1000):
        picked = np.sort(rng.choice(cfg.n_grid, size=cfg.sparse_count, replace=False))
        picked = picked[picked <= cut]
        if picked.size:
            return picked
    raise InvalidConfig("sparse sampling kept returning no observation before truncation")


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def write_signals_csv(signals, path) -> None:
    """Write signals as ``unit_id,time,value,env`` rows (env blank if unknown)."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for sig in signals:
                env = "" if sig.env_label is None else str(sig.env_label)
                for t, v in zip(sig.times, sig.values):
                    writer.writerow((sig.unit_id, f"{t:.17g}", f"{v:.17g}", env))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_signals_csv(path):
    """Parse a signals CSV into one signal per unit, rows time-sorted.

    Raises:
        ParseError: malformed header, row shape, or number field.
        InconsistentLabel: a unit carries two different env labels.
        NonMonotoneTime: duplicate timestamps within a unit.
        IoError: the file cannot be opened.
    """
    rows_by_unit: dict[str, list[tuple[float, float]]] = {}
    labels_by_unit: dict[str, set[int]] = {}
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            unit, t_raw, v_raw, env_raw = (f.strip() for f in row)
            if not unit:
                raise ParseError(f"{path}:{lineno}: empty unit_id")
            try:
                t = float(t_raw)
                v = float(v_raw)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric time or value")
            rows_by_unit.setdefault(unit, []).append((t, v))
            if env_raw:
                try:
                    labels_by_unit.setdefault(unit, set()).add(int(env_raw))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: env must be an integer or blank")

    signals = []
    for unit, obs in rows_by_unit.items():
        obs.sort(key=lambda pair: pair[0])
        times = np.array([t for t, _ in obs])
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneTime(f"unit {unit}: duplicate observation times")
        labels = labels_by_unit.get(unit, set())
        if len(labels) > 1:
            raise InconsistentLabel(f"unit {unit}: conflicting env labels {sorted(labels)}")
        signals.append(
            DegradationSignal(
                unit_id=unit,
                times=times,
                values=np.array([v for _, v in obs]),
                env_label=labels.pop() if labels else None,
            )
        )
    return signals


def write_lifetimes_csv(unit_ids, lifetimes, path) -> None:
    """Write the per-unit true lifetimes companion file."""
    if len(unit_ids) != len(lifetimes):
        raise ValueError("unit_ids and lifetimes must be equally long")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRUTH_HEADER)
            for unit, life in zip(unit_ids, lifetimes):
                writer.writerow((unit, f"{life:.17g}"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_lifetimes_csv(path) -> dict[str, float]:
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRUTH_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(TRUTH_HEADER)}")
        out: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields")
            unit, raw = (f.strip() for f in row)
            try:
                out[unit] = float(raw)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric lifetime")
    return out
