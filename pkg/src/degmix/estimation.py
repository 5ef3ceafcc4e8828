"""EM estimation of the spline-coefficient Gaussian mixture.

The degradation model: each unit's amplitude is B(t) gamma + noise, where
gamma is drawn from one of K Gaussian components (one per environment) and
the noise variance is component-specific. Fitting runs EM in two regimes:

* classification - environment labels of the training units are known, so
  component responsibilities are clamped to the labels and EM only
  integrates out the latent coefficients;
* clustering - labels are latent, responsibilities come from the marginal
  likelihood of each component, and the fit is restarted from several
  k-means initializations.

Per-cluster covariance estimates can be regularized by two-step shrinkage:
first toward the pooled covariance, then toward a scaled identity.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .basis import BasisSpec, design_matrix
from .errors import (
    EmptyCluster,
    LengthMismatch,
    NotConvergedWarning,
    SingularCovariance,
)

LOG_2PI = float(np.log(2.0 * np.pi))
SIGMA_FLOOR_SCALE = 1e-8  # times the largest observed amplitude


@dataclass(frozen=True)
class ShrinkageParams:
    """Two-step covariance shrinkage weights, both in [0, 1].

    ``lambda_shrink`` pulls each cluster covariance toward the pooled one;
    ``zeta`` then pulls the result toward tr/q times the identity.
    """

    lambda_shrink: float = 0.0
    zeta: float = 0.0

    def __post_init__(self):
        for name, value in (("lambda_shrink", self.lambda_shrink), ("zeta", self.zeta)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class ModelParams:
    """Fitted mixture parameters tied to their basis.

    ``pi`` is the component prior (K,), ``mu`` the coefficient means (K, q),
    ``lam`` the coefficient covariances (K, q, q), ``sigma`` the noise SDs (K,).
    """

    basis: BasisSpec
    pi: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).copy()
        mu = np.asarray(self.mu, dtype=float).copy()
        lam = np.asarray(self.lam, dtype=float).copy()
        sigma = np.asarray(self.sigma, dtype=float).copy()
        k, q = pi.size, self.basis.q
        if mu.shape != (k, q) or lam.shape != (k, q, q) or sigma.shape != (k,):
            raise ValueError("parameter shapes inconsistent with K and basis dimension")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-8:
            raise ValueError("pi must be nonnegative and sum to 1")
        if np.any(sigma <= 0):
            raise ValueError("noise SDs must be positive")
        for j in range(k):
            if not np.allclose(lam[j], lam[j].T, rtol=1e-8, atol=1e-10 * _scale(lam[j])):
                raise ValueError(f"lambda[{j}] is not symmetric")
            try:
                np.linalg.cholesky(lam[j])
            except np.linalg.LinAlgError:
                raise ValueError(f"lambda[{j}] is not positive definite")
        for arr in (pi, mu, lam, sigma):
            arr.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_clusters(self) -> int:
        return self.pi.size


def _scale(mat: np.ndarray) -> float:
    return float(max(np.abs(mat).max(), 1.0))


@dataclass(frozen=True)
class GammaMoments:
    """Per-signal, per-cluster posterior moments of the coefficient vector."""

    mean: np.ndarray  # (L, K, q)
    cov: np.ndarray  # (L, K, q, q)


@dataclass(frozen=True)
class FitReport:
    params: ModelParams
    responsibilities: np.ndarray  # (L, K)
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    hard_assignments: np.ndarray  # (L,), labels in 1..K


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CohortStats:
    """Per-signal quantities the EM iterations actually need."""

    gram: np.ndarray  # (L, q, q)  B_l' B_l
    proj: np.ndarray  # (L, q)     B_l' S_l
    sumsq: np.ndarray  # (L,)      S_l' S_l
    counts: np.ndarray  # (L,)     n_l
    max_abs: float


def _cohort_stats(basis: BasisSpec, signals) -> _CohortStats:
    if not signals:
        raise ValueError("need at least one signal")
    n = len(signals)
    q = basis.q
    gram = np.empty((n, q, q))
    proj = np.empty((n, q))
    sumsq = np.empty(n)
    counts = np.empty(n)
    max_abs = 0.0
    for i, sig in enumerate(signals):
        b = design_matrix(basis, sig.times)
        gram[i] = b.T @ b
        proj[i] = b.T @ sig.values
        sumsq[i] = sig.values @ sig.values
        counts[i] = sig.values.size
        max_abs = max(max_abs, float(np.abs(sig.values).max()))
    return _CohortStats(gram, proj, sumsq, counts, max_abs)


# ---------------------------------------------------------------------------
# E-step pieces
# ---------------------------------------------------------------------------


def _component_posterior(stats: _CohortStats, mu_k, lam_k, sigma_k):
    """Coefficient posterior moments and marginal log density for one cluster.

    Returns (mean (L, q), cov (L, q, q), loglik (L,)). The marginal density
    of each signal under the cluster uses the matrix-inversion and
    determinant identities that reduce the n_l x n_l covariance to q x q
    work, so cost is independent of signal length.
    """
    q = mu_k.size
    sig2 = float(sigma_k) ** 2
    try:
        lam_chol = np.linalg.cholesky(lam_k)
    except np.linalg.LinAlgError:
        raise SingularCovariance("cluster coefficient covariance is not positive definite")
    logdet_lam = 2.0 * float(np.log(np.diag(lam_chol)).sum())
    lam_inv = np.linalg.inv(lam_k)
    lam_inv = 0.5 * (lam_inv + lam_inv.T)

    prec = lam_inv[None, :, :] + stats.gram / sig2  # (L, q, q)
    sign, logdet_prec = np.linalg.slogdet(prec)
    if np.any(sign <= 0):
        raise SingularCovariance("posterior precision lost positive definiteness")
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    rhs = (lam_inv @ mu_k)[None, :] + stats.proj / sig2
    mean = np.einsum("lij,lj->li", cov, rhs)

    # Quadratic form of the marginal density via the q x q reduction.
    resid_ss = stats.sumsq - 2.0 * stats.proj @ mu_k + mu_k @ stats.gram @ mu_k
    u = stats.proj - stats.gram @ mu_k  # (L, q)
    quad = (resid_ss - np.einsum("li,lij,lj->l", u, cov, u) / sig2) / sig2
    loglik = (
        -0.5 * stats.counts * LOG_2PI
        - stats.counts * np.log(sigma_k)
        - 0.5 * (logdet_lam + logdet_prec)
        - 0.5 * quad
    )
    return mean, cov, loglik


def _all_posteriors(params: ModelParams, stats: _CohortStats):
    n, q = stats.proj.shape
    k = params.n_clusters
    mean = np.empty((n, k, q))
    cov = np.empty((n, k, q, q))
    loglik = np.empty((n, k))
    for j in range(k):
        mean[:, j], cov[:, j], loglik[:, j] = _component_posterior(
            stats, params.mu[j], params.lam[j], params.sigma[j]
        )
    return mean, cov, loglik


def _soft_responsibilities(pi: np.ndarray, loglik: np.ndarray):
    with np.errstate(divide="ignore"):
        logw = np.log(pi)[None, :] + loglik
    total = logsumexp(logw, axis=1)
    resp = np.exp(logw - total[:, None])
    return resp, float(total.sum())


def marginal_loglik(params: ModelParams, signal) -> float:
    """Mixture log density of one signal under the fitted model."""
    stats = _cohort_stats(params.basis, [signal])
    _, _, loglik = _all_posteriors(params, stats)
    with np.errstate(divide="ignore"):
        logw = np.log(params.pi) + loglik[0]
    return float(logsumexp(logw))


def e_step(params: ModelParams, signals):
    """Responsibilities and coefficient posterior moments for a cohort.

    Returns (responsibilities (L, K), GammaMoments).
    """
    stats = _cohort_stats(params.basis, signals)
    mean, cov, loglik = _all_posteriors(params, stats)
    resp, _ = _soft_responsibilities(params.pi, loglik)
    return resp, GammaMoments(mean=mean, cov=cov)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------


def shrink_covariance(raw, pooled, shrink: ShrinkageParams) -> np.ndarray:
    """Two-step shrinkage of per-cluster covariance estimates.

    Step 1 blends each raw matrix with the pooled matrix using weight
    ``lambda_shrink``; step 2 blends the result with tr/q times the identity
    using weight ``zeta``. Returns the (K, q, q) stack.
    """
    raw = np.asarray(raw, dtype=float)
    pooled = np.asarray(pooled, dtype=float)
    lam = shrink.lambda_shrink
    zeta = shrink.zeta
    step1 = (1.0 - lam) * raw + lam * pooled[None, :, :]
    q = raw.shape[-1]
    traces = np.trace(step1, axis1=1, axis2=2)
    eye = np.eye(q)
    return (1.0 - zeta) * step1 + zeta * (traces / q)[:, None, None] * eye[None, :, :]


def _m_step_core(stats, resp, mean, cov, shrink, basis, sigma_floor) -> ModelParams:
    n_units, n_clusters = resp.shape
    mass = resp.sum(axis=0)
    if np.any(mass < 1e-8):
        raise EmptyCluster(f"cluster mass collapsed: {mass}")
    pi = mass / n_units
    mu = np.einsum("lk,lkq->kq", resp, mean) / mass[:, None]
    dev = mean - mu[None, :, :]
    lam_raw = (
        np.einsum("lk,lkij->kij", resp, cov)
        + np.einsum("lk,lki,lkj->kij", resp, dev, dev)
    ) / mass[:, None, None]
    lam_raw = 0.5 * (lam_raw + lam_raw.transpose(0, 2, 1))
    pooled = np.einsum("k,kij->ij", mass, lam_raw) / n_units
    lam = shrink_covariance(lam_raw, pooled, shrink)
    lam = 0.5 * (lam + lam.transpose(0, 2, 1))

    # E[ ||S_l - B_l gamma||^2 ] decomposed through the sufficient statistics.
    fit_ss = (
        stats.sumsq[:, None]
        - 2.0 * np.einsum("lkq,lq->lk", mean, stats.proj)
        + np.einsum("lki,lij,lkj->lk", mean, stats.gram, mean)
        + np.einsum("lij,lkij->lk", stats.gram, cov)
    )
    sigma2 = np.einsum("lk,lk->k", resp, fit_ss) / (resp * stats.counts[:, None]).sum(axis=0)
    sigma = np.sqrt(np.maximum(sigma2, sigma_floor**2))
    return ModelParams(basis=basis, pi=pi, mu=mu, lam=lam, sigma=sigma)


def m_step(signals, responsibilities, moments: GammaMoments, shrink: ShrinkageParams,
           basis: BasisSpec) -> ModelParams:
    """Maximize the expected complete-data likelihood, then apply shrinkage."""
    resp = np.asarray(responsibilities, dtype=float)
    if np.any(np.abs(resp.sum(axis=1) - 1.0) > 1e-8):
        raise ValueError("responsibility rows must sum to 1")
    stats = _cohort_stats(basis, signals)
    floor = SIGMA_FLOOR_SCALE * max(stats.max_abs, 1e-300)
    return _m_step_core(stats, resp, moments.mean, moments.cov, shrink, basis, floor)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _ridge_coefficients(stats: _CohortStats) -> np.ndarray:
    """Per-signal ridge coefficient estimates; the ridge keeps short sparse
    signals (n_l < q) solvable."""
    q = stats.proj.shape[1]
    ridge = 1e-6 * np.trace(stats.gram, axis1=1, axis2=2) / q
    ridge = np.maximum(ridge, 1e-12)
    eye = np.eye(q)
    lhs = stats.gram + ridge[:, None, None] * eye[None]
    return np.linalg.solve(lhs, stats.proj[:, :, None])[:, :, 0]


def _init_from_labels(stats, labels0, n_clusters, basis, sigma_floor,
                      allow_reseed) -> ModelParams:
    """Hard-label moment estimates used as EM starting values."""
    coefs = _ridge_coefficients(stats)
    labels0 = np.asarray(labels0, dtype=int).copy()
    n_units, q = coefs.shape
    if allow_reseed:
        # k-means occasionally returns an empty cluster; hand it one unit.
        order = np.argsort(-np.linalg.norm(coefs, axis=1))
        for k in range(n_clusters):
            if not np.any(labels0 == k):
                labels0[order[k % n_units]] = k
    global_dev = coefs - coefs.mean(axis=0)
    global_cov = global_dev.T @ global_dev / n_units

    pi = np.empty(n_clusters)
    mu = np.empty((n_clusters, q))
    lam = np.empty((n_clusters, q, q))
    sigma = np.empty(n_clusters)
    for k in range(n_clusters):
        members = np.flatnonzero(labels0 == k)
        if members.size == 0:
            raise EmptyCluster(f"no training unit carries label {k + 1}")
        pi[k] = members.size / n_units
        mu[k] = coefs[members].mean(axis=0)
        dev = coefs[members] - mu[k]
        cov = dev.T @ dev / members.size
        if members.size < 2 or np.trace(cov) <= 0:
            cov = global_cov.copy()
        jitter = max(1e-4 * np.trace(cov) / q, 1e-4 * np.trace(global_cov) / q, 1e-10)
        lam[k] = cov + jitter * np.eye(q)
        rss = (
            stats.sumsq[members]
            - 2.0 * np.einsum("li,li->l", coefs[members], stats.proj[members])
            + np.einsum("li,lij,lj->l", coefs[members], stats.gram[members], coefs[members])
        )
        sigma[k] = max(np.sqrt(max(rss.sum(), 0.0) / stats.counts[members].sum()), sigma_floor)
    return ModelParams(basis=basis, pi=pi / pi.sum(), mu=mu, lam=lam, sigma=sigma)


def _kmeans_labels(coefs: np.ndarray, n_clusters: int, rng) -> np.ndarray:
    if n_clusters == 1:
        return np.zeros(coefs.shape[0], dtype=int)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(coefs, n_clusters, minit="++", seed=rng)
    return labels


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------


def _clamped_loglik(pi, loglik, clamp):
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    terms = np.where(clamp > 0, logpi[None, :] + loglik, 0.0)
    return float(terms.sum())


def _em_loop(stats, basis, params, shrink, max_iter, tol, clamp, sigma_floor):
    trace: list[float] = []
    converged = False
    iterations = 0
    resp = None
    for _ in range(max_iter):
        mean, cov, loglik = _all_posteriors(params, stats)
        if clamp is None:
            resp, total = _soft_responsibilities(params.pi, loglik)
        else:
            resp = clamp
            total = _clamped_loglik(params.pi, loglik, clamp)
        trace.append(total)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
        params = _m_step_core(stats, resp, mean, cov, shrink, basis, sigma_floor)
        iterations += 1
    else:
        # Iteration cap hit after an M-step: resynchronize the report.
        mean, cov, loglik = _all_posteriors(params, stats)
        if clamp is None:
            resp, total = _soft_responsibilities(params.pi, loglik)
        else:
            resp = clamp
            total = _clamped_loglik(params.pi, loglik, clamp)
        trace.append(total)
    return params, resp, np.asarray(trace), iterations, converged


def fit(signals, n_clusters: int, basis: BasisSpec, *,
        shrink: ShrinkageParams = ShrinkageParams(),
        scenario: str = "clustering",
        init_seed: int = 0,
        max_iter: int = 500,
        tol: float = 1e-6,
        n_restarts: int = 10) -> FitReport:
    """Fit the mixture by EM under the chosen scenario.

    classification clamps responsibilities to the units' environment labels
    (which must all be present and within 1..K); clustering runs soft EM
    from ``n_restarts`` k-means initializations of per-signal ridge
    coefficients and keeps the restart with the best final log-likelihood.

    A ``NotConvergedWarning`` is emitted (and ``converged=False`` reported)
    when the iteration cap is reached.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if scenario not in ("classification", "clustering"):
        raise ValueError(f"scenario must be 'classification' or 'clustering', got {scenario!r}")
    stats = _cohort_stats(basis, signals)
    sigma_floor = SIGMA_FLOOR_SCALE * max(stats.max_abs, 1e-300)

    if scenario == "classification":
        labels = [s.env_label for s in signals]
        if any(lab is None for lab in labels):
            raise ValueError("classification requires an env label on every training signal")
        labels0 = np.asarray(labels, dtype=int) - 1
        if labels0.min() < 0 or labels0.max() >= n_clusters:
            raise ValueError(f"env labels must lie in 1..{n_clusters}")
        clamp = np.zeros((len(signals), n_clusters))
        clamp[np.arange(len(signals)), labels0] = 1.0
        params0 = _init_from_labels(stats, labels0, n_clusters, basis, sigma_floor,
                                    allow_reseed=False)
        params, resp, trace, iters, converged = _em_loop(
            stats, basis, params0, shrink, max_iter, tol, clamp, sigma_floor
        )
    else:
        coefs = _ridge_coefficients(stats)
        restarts = 1 if n_clusters == 1 else max(1, n_restarts)
        best = None
        failure: Exception | None = None
        for child in np.random.SeedSequence(init_seed).spawn(restarts):
            rng = np.random.default_rng(child)
            try:
                labels0 = _kmeans_labels(coefs, n_clusters, rng)
                params0 = _init_from_labels(stats, labels0, n_clusters, basis,
                                            sigma_floor, allow_reseed=True)
                result = _em_loop(stats, basis, params0, shrink, max_iter, tol,
                                  None, sigma_floor)
            except (EmptyCluster, SingularCovariance) as exc:
                failure = exc
                continue
            if best is None or result[2][-1] > best[2][-1]:
                best = result
        if best is None:
            raise failure if failure is not None else EmptyCluster("no restart succeeded")
        params, resp, trace, iters, converged = best

    if not converged:
        warnings.warn(
            f"EM stopped after {iters} iterations without meeting tol={tol}",
            NotConvergedWarning,
        )
    return FitReport(
        params=params,
        responsibilities=resp,
        loglik_trace=trace,
        iterations=iters,
        converged=converged,
        hard_assignments=resp.argmax(axis=1) + 1,
    )


# ---------------------------------------------------------------------------
# Clustering agreement
# ---------------------------------------------------------------------------


def rand_index(labels_a, labels_b) -> float:
    """Fraction of unit pairs on which two labelings agree (same/different).

    Invariant under relabeling of either side.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size != b.size or a.size < 2:
        raise LengthMismatch(
            f"need two equal-length label vectors with >= 2 entries, got {a.size} and {b.size}"
        )
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    n_a = ia.max() + 1
    n_b = ib.max() + 1
    contingency = np.bincount(ia * n_b + ib, minlength=n_a * n_b).reshape(n_a, n_b)

    def pairs(x):
        x = np.asarray(x, dtype=float)
        return float((x * (x - 1) / 2).sum())

    total = a.size * (a.size - 1) / 2
    both = pairs(contingency)
    in_a = pairs(contingency.sum(axis=1))
    in_b = pairs(contingency.sum(axis=0))
    return float((total + 2 * both - in_a - in_b) / total)


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

MODEL_SCHEMA_VERSION = 1


def params_to_dict(params: ModelParams) -> dict:
    """Versioned JSON-ready form of fitted parameters (lossless floats)."""
    return {
        "version": MODEL_SCHEMA_VERSION,
        "K": params.n_clusters,
        "q": params.basis.q,
        "M": params.basis.domain_end,
        "knots": list(params.basis.knots),
        "pi": params.pi.tolist(),
        "mu": params.mu.tolist(),
        "lambda": params.lam.tolist(),
        "sigma": params.sigma.tolist(),
    }


def params_from_dict(doc: dict) -> ModelParams:
    if doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version: {doc.get('version')!r}")
    basis = BasisSpec(q=int(doc["q"]), domain_end=float(doc["M"]),
                      knots=tuple(float(t) for t in doc["knots"]))
    params = ModelParams(
        basis=basis,
        pi=np.asarray(doc["pi"], dtype=float),
        mu=np.asarray(doc["mu"], dtype=float),
        lam=np.asarray(doc["lambda"], dtype=float),
        sigma=np.asarray(doc["sigma"], dtype=float),
    )
    if params.n_clusters != int(doc["K"]):
        raise ValueError("stored K disagrees with parameter shapes")
    return params


def save_params(params: ModelParams, path, extra: dict | None = None) -> None:
    doc = params_to_dict(params)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_params(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
