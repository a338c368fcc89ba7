"""Mahalanobis distance from a point to a Gaussian mixture.

For a single Gaussian this is the classical form
sqrt((p - mu)^T Sigma^{-1} (p - mu)). For a mixture, the inverse
covariances are averaged with weights proportional to

    pi_k * integral of the component density along the straight segment
    from the mixture mean to the query point,

and the distance uses the resulting matrix G. The segment integral of a
2-D Gaussian reduces to a 1-D Gaussian integral with a closed form in the
normal CDF; `segment_weights_quadrature` provides an independent
adaptive-quadrature oracle for it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr

from .gmm import LOG_2PI, mixture_mean

_DEGENERATE_DISTANCE = 1e-12


def classical_md(mean, cov, point):
    """sqrt((p - mu)^T Sigma^{-1} (p - mu))."""
    diff = np.asarray(point, dtype=float) - np.asarray(mean, dtype=float)
    sol = np.linalg.solve(np.asarray(cov, dtype=float), diff)
    return math.sqrt(max(float(diff @ sol), 0.0))


def _log_phi_diff(lo, hi):
    """log(Phi(hi) - Phi(lo)) for hi > lo, stable in both tails."""
    if lo > 0.0:  # reflect so the larger mass sits on the left tail
        lo, hi = -hi, -lo
    la = log_ndtr(hi)
    lb = log_ndtr(lo)
    delta = lb - la
    if delta > -1e-12:  # interval too narrow for CDF cancellation
        mid = 0.5 * (lo + hi)
        width = hi - lo
        if width <= 0.0:
            return -np.inf
        return -0.5 * (LOG_2PI + mid * mid) + math.log(width)
    return la + math.log1p(-math.exp(delta))


def _segment_log_integrals(model, point):
    """Log of the per-component density line integrals from mu_GMM to point.

    The common arc-length factor ||p - mu_GMM|| is omitted; it cancels in
    the normalized weights.
    """
    mu = mixture_mean(model)
    d = np.asarray(point, dtype=float) - mu
    logs = np.empty(model.n_components)
    for k in range(model.n_components):
        lam = np.linalg.inv(model.covariances[k])
        e = mu - model.means[k]
        a = float(d @ lam @ d)
        b = 2.0 * float(d @ lam @ e)
        c = float(e @ lam @ e)
        sign, logdet = np.linalg.slogdet(model.covariances[k])
        # integral_0^1 exp(-(a s^2 + b s + c)/2) ds, a > 0 since Lambda is PD
        s0 = -b / (2.0 * a)
        sqrt_a = math.sqrt(a)
        peak = -0.5 * c + b * b / (8.0 * a)
        log_gauss_int = 0.5 * (LOG_2PI - math.log(a)) + _log_phi_diff(
            (0.0 - s0) * sqrt_a, (1.0 - s0) * sqrt_a
        )
        logs[k] = -LOG_2PI - 0.5 * logdet + peak + log_gauss_int
    return logs


def segment_weights(model, point):
    """Normalized G-matrix weights pi_k * (segment integral), closed form."""
    logs = _segment_log_integrals(model, point) + np.log(model.weights)
    logs -= logs.max()
    w = np.exp(logs)
    return w / w.sum()


def segment_weights_quadrature(model, point):
    """Same weights via adaptive quadrature of the densities along the segment."""
    mu = mixture_mean(model)
    point = np.asarray(point, dtype=float)
    d = point - mu
    vals = np.empty(model.n_components)
    for k in range(model.n_components):
        lam = np.linalg.inv(model.covariances[k])
        det = np.linalg.det(model.covariances[k])
        norm = 1.0 / (2.0 * math.pi * math.sqrt(det))

        def density(s, lam=lam, norm=norm, mk=model.means[k]):
            v = mu + s * d - mk
            return norm * math.exp(-0.5 * float(v @ lam @ v))

        vals[k], _ = integrate.quad(density, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)
    w = model.weights * vals
    total = w.sum()
    if total <= 0.0:
        raise FloatingPointError("quadrature weights underflowed to zero")
    return w / total


def tipping_md(model, point, weight_fn=segment_weights):
    """Generalized Mahalanobis distance from `point` to the mixture.

    With one component the weights are exactly [1] and this reduces to the
    classical Mahalanobis distance. A query at the mixture mean returns 0
    without evaluating the (0/0) weights.
    """
    mu = mixture_mean(model)
    d = np.asarray(point, dtype=float) - mu
    if np.linalg.norm(d) < _DEGENERATE_DISTANCE:
        return 0.0
    w = weight_fn(model, point)
    g = np.zeros((2, 2))
    for k in range(model.n_components):
        g += w[k] * np.linalg.inv(model.covariances[k])
    return math.sqrt(max(float(d @ g @ d), 0.0))
