"""2-D Gaussian mixture fitting by EM with BIC model selection.

The fits feed the AMD/AMV metrics: per prediction cell we fit the sample
cloud, pick the component count by BIC (lower is better) and read off the
mixture mean, mixture covariance and per-component inverse covariances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, FitError, InfeasibleFitError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FitConfig:
    k_candidates: tuple = (1, 2, 3, 4, 5)
    max_em_iters: int = 200
    ll_tolerance: float = 1e-6  # per-point log-likelihood improvement
    covariance_floor: float = 1e-6  # m^2, eigenvalue floor
    n_restarts: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if not self.k_candidates or any(k < 1 for k in self.k_candidates):
            raise DataError("k_candidates must be non-empty with each k >= 1")
        if self.ll_tolerance <= 0:
            raise DataError("ll_tolerance must be positive")


@dataclass
class GmmModel:
    """Fitted mixture: weights (K,), means (K, 2), covariances (K, 2, 2)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float
    bic: float
    n_points: int
    ll_history: list = field(default_factory=list, repr=False)

    @property
    def n_components(self):
        return len(self.weights)

    def to_dict(self):
        return {
            "K": int(self.n_components),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covariances.tolist(),
            "log_likelihood": float(self.log_likelihood),
            "bic": float(self.bic),
            "n_points": int(self.n_points),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            weights=np.array(d["weights"], dtype=float),
            means=np.array(d["means"], dtype=float),
            covariances=np.array(d["covs"], dtype=float),
            log_likelihood=float(d["log_likelihood"]),
            bic=float(d["bic"]),
            n_points=int(d["n_points"]),
        )


def n_free_parameters(k):
    """Free parameters of a K-component 2-D full-covariance mixture."""
    return (k - 1) + 2 * k + 3 * k


def bic_score(log_likelihood, k, n_points):
    return n_free_parameters(k) * math.log(n_points) - 2.0 * log_likelihood


def _floor_covariance(cov, floor):
    """Clip covariance eigenvalues from below, keeping symmetry."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] >= floor:
        return cov
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _log_gauss(points, mean, cov):
    """Log density of N(mean, cov) at each row of points."""
    diff = points - mean
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (2 * LOG_2PI + logdet + maha)


def _kmeanspp_means(points, k, rng):
    """k-means++ seeding: spread initial means by squared distance."""
    n = len(points)
    means = np.empty((k, 2))
    means[0] = points[rng.integers(n)]
    d2 = np.sum((points - means[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            means[j] = points[rng.integers(n)]
            continue
        means[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - means[j]) ** 2, axis=1))
    return means


def _em_once(points, k, cfg, rng):
    n = len(points)
    means = _kmeanspp_means(points, k, rng)
    overall = np.cov(points.T) if n > 1 else np.zeros((2, 2))
    overall = _floor_covariance(np.atleast_2d(overall), cfg.covariance_floor)
    covs = np.repeat(overall[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    ll = -np.inf
    history = []
    for _ in range(cfg.max_em_iters):
        # E step
        log_comp = np.stack(
            [np.log(weights[j]) + _log_gauss(points, means[j], covs[j]) for j in range(k)]
        )  # (k, n)
        log_norm = logsumexp(log_comp, axis=0)
        resp = np.exp(log_comp - log_norm)  # (k, n)
        new_ll = float(log_norm.sum())
        history.append(new_ll)
        if new_ll - ll < cfg.ll_tolerance * n and np.isfinite(ll):
            ll = new_ll
            break
        ll = new_ll
        # M step
        nk = resp.sum(axis=1)
        for j in range(k):
            if nk[j] < 1e-12:
                # empty component: keep mean, shrink to floored covariance
                covs[j] = _floor_covariance(covs[j], cfg.covariance_floor)
                continue
            means[j] = resp[j] @ points / nk[j]
            diff = points - means[j]
            cov = (resp[j][:, None] * diff).T @ diff / nk[j]
            covs[j] = _floor_covariance(cov, cfg.covariance_floor)
        weights = nk / n
        weights = weights / weights.sum()
    else:
        # iteration cap hit: refresh ll so it matches the returned parameters
        log_comp = np.stack(
            [np.log(weights[j]) + _log_gauss(points, means[j], covs[j]) for j in range(k)]
        )
        ll = float(logsumexp(log_comp, axis=0).sum())
        history.append(ll)

    model = GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        log_likelihood=ll,
        bic=bic_score(ll, k, n),
        n_points=n,
        ll_history=history,
    )
    return model


def em_fit(points, k, cfg=FitConfig()):
    """Fit a k-component mixture by EM, best of cfg.n_restarts by likelihood."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise DataError("points must have shape (n, 2)")
    if not np.isfinite(points).all():
        raise DataError("points must be finite")
    if len(points) < k:
        raise InfeasibleFitError(f"{len(points)} points cannot support k={k}")
    best = None
    for r in range(cfg.n_restarts):
        rng = np.random.default_rng([cfg.rng_seed, k, r])
        model = _em_once(points, k, cfg, rng)
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return best


def select_by_bic(points, cfg=FitConfig()):
    """Fit every candidate k and return the minimum-BIC model.

    Equal BIC ties break toward the smaller k. An infeasible candidate
    (fewer points than components) propagates as InfeasibleFitError: the
    caller asked for fits the sample count cannot support, and callers
    computing per-cell metrics exclude and count such cells.
    """
    points = np.asarray(points, dtype=float)
    best = None
    for k in sorted(cfg.k_candidates):
        model = em_fit(points, k, cfg)
        if best is None or model.bic < best.bic:
            best = model
    if best is None:
        raise FitError(f"no candidate k fits {len(points)} points")
    return best


def mixture_mean(model):
    """Probability-weighted mean of the component means."""
    return model.weights @ model.means


def mixture_covariance(model):
    """Total mixture covariance: within-component plus between-component."""
    mu = mixture_mean(model)
    within = np.einsum("k,kij->ij", model.weights, model.covariances)
    centered = model.means - mu
    between = np.einsum("k,ki,kj->ij", model.weights, centered, centered)
    return within + between


def sample(model, count, rng_seed=0):
    """Ancestral sampling: categorical over weights, then component Gaussian."""
    if count < 0:
        raise DataError("count must be >= 0")
    rng = np.random.default_rng(rng_seed)
    out = np.empty((count, 2))
    if count == 0:
        return out
    labels = rng.choice(model.n_components, size=count, p=model.weights)
    for j in range(model.n_components):
        mask = labels == j
        if mask.any():
            out[mask] = rng.multivariate_normal(
                model.means[j], model.covariances[j], size=int(mask.sum())
            )
    return out
