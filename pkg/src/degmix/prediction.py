"""Residual-life prediction for a partially observed unit.

Prediction is two-staged: first the coefficient posterior given the partial
signal (a K-component Gaussian mixture, weighted by the posterior
probability of each environment), then a parametric bootstrap that pushes
coefficient draws through the signal model and reads off first crossings of
the failure threshold.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .basis import BasisSpec, design_matrix
from .errors import AllCensored, RejectionOverflow, SingularCovariance
from .estimation import ModelParams, _all_posteriors, _cohort_stats


@dataclass(frozen=True)
class GammaPosterior:
    """Mixture posterior of the coefficient vector for one fielded unit.

    ``t_star`` is the observation horizon and ``threshold`` the failure
    level; both travel with the posterior so bootstrap draws are
    self-contained.
    """

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, q)
    covariances: np.ndarray  # (K, q, q)
    t_star: float
    threshold: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).copy()
        means = np.asarray(self.means, dtype=float).copy()
        covs = np.asarray(self.covariances, dtype=float).copy()
        if abs(weights.sum() - 1.0) > 1e-10 or np.any(weights < 0):
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-10")
        if means.ndim != 2 or covs.shape != (*means.shape, means.shape[1]):
            raise ValueError("means must be (K, q) and covariances (K, q, q)")
        for j, cov in enumerate(covs):
            if not np.allclose(cov, cov.T, rtol=1e-8, atol=1e-10 * max(1.0, np.abs(cov).max())):
                raise ValueError(f"covariance {j} is not symmetric")
            w = np.linalg.eigvalsh(cov)
            if w.min() < -1e-8 * max(1.0, w.max()):
                raise SingularCovariance(f"covariance {j} is not positive semidefinite")
        if self.t_star < 0:
            raise ValueError("t_star must be >= 0")
        for arr in (weights, means, covs):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def n_components(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class RldSamples:
    """Bootstrap residual-life draws; censored entries hit the domain end."""

    draws: np.ndarray
    censored: np.ndarray
    n_rejected: int

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float).copy()
        censored = np.asarray(self.censored, dtype=bool).copy()
        if draws.shape != censored.shape or draws.ndim != 1:
            raise ValueError("draws and censored flags must be equal-length 1-D arrays")
        if np.any(draws[~censored] <= 0):
            raise ValueError("non-censored residual-life draws must be positive")
        draws.flags.writeable = False
        censored.flags.writeable = False
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "censored", censored)

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())


def cluster_posterior(params: ModelParams, partial) -> np.ndarray:
    """Posterior environment probabilities given a partial signal.

    Proportional to prior weight times the marginal Gaussian density of the
    observed amplitudes under each component, normalized in log space.
    """
    stats = _cohort_stats(params.basis, [partial])
    _, _, loglik = _all_posteriors(params, stats)
    with np.errstate(divide="ignore"):
        logw = np.log(params.pi) + loglik[0]
    return np.exp(logw - logsumexp(logw))


def gamma_posterior(params: ModelParams, partial, threshold: float,
                    t_star: float | None = None) -> GammaPosterior:
    """Coefficient posterior mixture for a partially observed unit.

    ``t_star`` defaults to the last observation time; evaluation pipelines
    that truncate signals at an arbitrary horizon can pass it explicitly.
    """
    stats = _cohort_stats(params.basis, [partial])
    mean, cov, loglik = _all_posteriors(params, stats)
    with np.errstate(divide="ignore"):
        logw = np.log(params.pi) + loglik[0]
    weights = np.exp(logw - logsumexp(logw))
    horizon = float(partial.times[-1]) if t_star is None else float(t_star)
    return GammaPosterior(
        weights=weights,
        means=mean[0],
        covariances=cov[0],
        t_star=horizon,
        threshold=float(threshold),
    )


def prior_posterior(params: ModelParams, threshold: float, t_star: float = 0.0) -> GammaPosterior:
    """The no-data posterior: prior weights and coefficient distributions."""
    return GammaPosterior(
        weights=params.pi,
        means=params.mu,
        covariances=params.lam,
        t_star=float(t_star),
        threshold=float(threshold),
    )


def _factor_psd(cov: np.ndarray) -> np.ndarray:
    """Matrix square root that tolerates semidefinite (even zero) input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, u = np.linalg.eigh(cov)
        if w.min() < -1e-8 * max(1.0, w.max()):
            raise SingularCovariance("covariance is not positive semidefinite")
        return u * np.sqrt(np.clip(w, 0.0, None))


def sample_rld(post: GammaPosterior, basis: BasisSpec, n_draws: int,
               crossing_grid_size: int = 801, seed: int = 0) -> RldSamples:
    """Bootstrap the residual-life distribution.

    Each draw samples a mixture component, then a coefficient vector, forms
    the noise-free curve on a uniform grid over [0, M], and takes the first
    grid time strictly above the threshold. Draws whose crossing is at or
    before ``t_star`` are rejected and redrawn; paths that never cross are
    kept as censored draws valued ``M - t_star``.

    Raises:
        RejectionOverflow: after 1000 * n_draws rejections, which indicates
            the posterior believes the unit already failed.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if post.means.shape[1] != basis.q:
        raise ValueError("posterior dimension does not match the basis")
    if post.t_star >= basis.domain_end:
        raise ValueError("the observation horizon must lie inside the basis domain")
    if crossing_grid_size < 2:
        raise ValueError("crossing_grid_size must be >= 2")

    grid = np.linspace(0.0, basis.domain_end, crossing_grid_size)
    bgrid = design_matrix(basis, grid)
    factors = np.stack([_factor_psd(cov) for cov in post.covariances])
    rng = np.random.default_rng(seed)
    horizon_value = basis.domain_end - post.t_star

    draws = np.empty(n_draws)
    censored = np.zeros(n_draws, dtype=bool)
    filled = 0
    rejected = 0
    cap = 1000 * n_draws
    while filled < n_draws:
        batch = n_draws - filled
        comps = rng.choice(post.n_components, size=batch, p=post.weights)
        z = rng.standard_normal((batch, basis.q))
        gammas = post.means[comps] + np.einsum("bij,bj->bi", factors[comps], z)
        curves = gammas @ bgrid.T
        above = curves > post.threshold
        crosses = above.any(axis=1)
        first = np.argmax(above, axis=1)
        rl = grid[first] - post.t_star

        keep_ok = crosses & (rl > 0)
        keep_censored = ~crosses
        rejected += int((crosses & (rl <= 0)).sum())
        if rejected > cap:
            raise RejectionOverflow(
                f"{rejected} rejected draws for {n_draws} requested; "
                "the unit appears to be past the threshold under the model"
            )
        keep = keep_ok | keep_censored
        values = np.where(keep_censored, horizon_value, rl)[keep]
        flags = keep_censored[keep]
        take = min(values.size, n_draws - filled)
        draws[filled:filled + take] = values[:take]
        censored[filled:filled + take] = flags[:take]
        filled += take
    return RldSamples(draws=draws, censored=censored, n_rejected=rejected)


def rld_point_prediction(samples: RldSamples) -> float:
    """Mean of the non-censored residual-life draws."""
    live = samples.draws[~samples.censored]
    if live.size == 0:
        raise AllCensored("every bootstrap path stayed below the threshold")
    return float(live.mean())


def rld_quantiles(samples: RldSamples, probs) -> np.ndarray:
    """Nearest-rank empirical quantiles of the non-censored draws."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or np.any(probs >= 1):
        raise ValueError("quantile probabilities must lie strictly inside (0, 1)")
    live = np.sort(samples.draws[~samples.censored])
    if live.size == 0:
        raise AllCensored("every bootstrap path stayed below the threshold")
    ranks = np.ceil(probs * live.size).astype(int) - 1
    return live[np.clip(ranks, 0, live.size - 1)]
