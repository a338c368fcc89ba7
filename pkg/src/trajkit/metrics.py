"""Displacement, density and distribution-aware trajectory metrics.

ADE/FDE measure Euclidean error of a single trajectory set; best-of-N
picks the closest of S stochastic samples. KDE-NLL scores the ground
truth under a kernel density fitted per (agent, timestep) cell. AMD fits
a BIC-selected Gaussian mixture per cell and averages the generalized
Mahalanobis distance to the truth; AMV averages the largest-magnitude
eigenvalue of the mixture covariance. The (AMD + AMV) / 2 summary mixes
standard-deviation units with m^2 by definition.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from sklearn.neighbors import KernelDensity

from .errors import ContractError, DataError, FitError, InfeasibleFitError
from .gmm import FitConfig, mixture_covariance, select_by_bic
from .mahalanobis import classical_md, tipping_md

DENSITY_FLOOR = 1e-300
ZERO_VARIANCE_BANDWIDTH = 1e-3  # m, fallback when spread rules degenerate

VALID_KERNELS = ("gaussian", "tophat", "epanechnikov", "exponential", "linear", "cosine")


@dataclass
class PredictionSet:
    """S stochastic sample trajectories per agent: samples (S, N, T_p, 2)."""

    samples: np.ndarray
    scene_ref: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 4 or self.samples.shape[3] != 2:
            raise ContractError("samples must have shape (S, N, T_p, 2)")
        if self.samples.shape[0] < 1:
            raise ContractError("need at least one sample")
        if not np.isfinite(self.samples).all():
            raise DataError("samples must be finite")

    @property
    def n_samples(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class KdeConfig:
    kernel: str = "gaussian"
    bandwidth_rule: object = "scott"  # "scott" | "silverman" | positive float

    def __post_init__(self):
        if self.kernel not in VALID_KERNELS:
            raise ContractError(f"unknown kernel {self.kernel!r}")
        if isinstance(self.bandwidth_rule, (int, float)):
            if self.bandwidth_rule <= 0:
                raise ContractError("fixed bandwidth must be positive")
        elif self.bandwidth_rule not in ("scott", "silverman"):
            raise ContractError(f"unknown bandwidth rule {self.bandwidth_rule!r}")


@dataclass
class MetricReport:
    ade: float
    fde: float
    kde_nll: float
    amd: float
    amv: float
    excluded_cells: int = 0
    kde_fallbacks: int = 0
    per_scene: list = field(default_factory=list)

    @property
    def amd_amv_avg(self):
        return (self.amd + self.amv) / 2.0

    def to_dict(self):
        return {
            "ade": self.ade,
            "fde": self.fde,
            "kde_nll": self.kde_nll,
            "amd": self.amd,
            "amv": self.amv,
            "amd_amv_avg": self.amd_amv_avg,
            "excluded_cells": self.excluded_cells,
            "kde_fallbacks": self.kde_fallbacks,
            "per_scene": list(self.per_scene),
        }


def ade_fde(pred, truth):
    """Mean and final-step Euclidean error for a single trajectory set.

    pred, truth: (N, T_p, 2). Returns (ade, fde) in meters.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[2] != 2:
        raise ContractError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = np.linalg.norm(pred - truth, axis=2)  # (N, T_p)
    return float(err.mean()), float(err[:, -1].mean())


BonResult = namedtuple("BonResult", ["ade", "fde", "best_indices"])


def best_of_n(samples, truth, scope="agent"):
    """Best-of-N ADE/FDE: evaluate only the closest-by-ADE sample.

    scope="agent" selects the minimizing sample per agent; scope="scene"
    selects one sample for the whole scene by scene-mean ADE.
    """
    samples = np.asarray(samples, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if samples.ndim != 4 or samples.shape[1:] != truth.shape:
        raise ContractError(f"shape mismatch: {samples.shape} vs {truth.shape}")
    err = np.linalg.norm(samples - truth, axis=3)  # (S, N, T_p)
    per_agent_ade = err.mean(axis=2)  # (S, N)
    if scope == "agent":
        best = per_agent_ade.argmin(axis=0)  # (N,)
        agents = np.arange(truth.shape[0])
        ade = float(per_agent_ade[best, agents].mean())
        fde = float(err[best, agents, -1].mean())
        return BonResult(ade, fde, best)
    if scope == "scene":
        idx = int(per_agent_ade.mean(axis=1).argmin())
        ade, fde = ade_fde(samples[idx], truth)
        return BonResult(ade, fde, np.full(truth.shape[0], idx))
    raise ContractError(f"unknown BoN scope {scope!r}")


def _bandwidth(points, cfg):
    """Per-cell KDE bandwidth; returns (bandwidth, used_fallback)."""
    if isinstance(cfg.bandwidth_rule, (int, float)):
        return float(cfg.bandwidth_rule), False
    n, d = points.shape
    sigma = math.sqrt(float(points.var(axis=0).mean()))
    if sigma < 1e-12:
        return ZERO_VARIANCE_BANDWIDTH, True
    if cfg.bandwidth_rule == "scott":
        return sigma * n ** (-1.0 / (d + 4)), False
    return sigma * (n * (d + 2) / 4.0) ** (-1.0 / (d + 4)), False


KdeResult = namedtuple("KdeResult", ["nll", "fallback_cells"])


def kde_nll(samples, truth, cfg=KdeConfig()):
    """Negative mean log KDE density of the truth, in nats.

    Fits one 2-D KDE per (agent, timestep) cell over the S sample points.
    Densities are floored at 1e-300 before the log. Cells whose sample
    cloud has zero spread fall back to a fixed 1e-3 m bandwidth and are
    counted in fallback_cells.
    """
    samples = np.asarray(samples, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if samples.ndim != 4 or samples.shape[1:] != truth.shape:
        raise ContractError(f"shape mismatch: {samples.shape} vs {truth.shape}")
    if samples.shape[0] < 2:
        raise ContractError("KDE bandwidth rules need at least 2 samples")
    n_agents, t_pred = truth.shape[:2]
    log_dens = np.empty((n_agents, t_pred))
    fallbacks = 0
    for n in range(n_agents):
        for t in range(t_pred):
            cloud = samples[:, n, t, :]
            bw, fell_back = _bandwidth(cloud, cfg)
            fallbacks += fell_back
            kde = KernelDensity(kernel=cfg.kernel, bandwidth=bw).fit(cloud)
            ld = float(kde.score_samples(truth[n, t][None])[0])
            log_dens[n, t] = max(ld, math.log(DENSITY_FLOOR))
    return KdeResult(float(-log_dens.mean()), fallbacks)


CellMetric = namedtuple("CellMetric", ["value", "excluded_cells"])


def _fit_cells(samples, fit_cfg):
    """Fit one BIC-selected mixture per (agent, timestep) cell.

    Yields (n, t, model-or-None); failed fits yield None.
    """
    _, n_agents, t_pred, _ = samples.shape
    for n in range(n_agents):
        for t in range(t_pred):
            try:
                model = select_by_bic(samples[:, n, t, :], fit_cfg)
            except (InfeasibleFitError, FitError):
                model = None
            yield n, t, model


def amd_amv(samples, truth, fit_cfg=FitConfig()):
    """AMD and AMV from a single pass of per-cell mixture fits.

    Returns (CellMetric(amd), CellMetric(amv)); cells whose fit fails are
    excluded from both means and counted.
    """
    samples = np.asarray(samples, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if samples.ndim != 4 or samples.shape[1:] != truth.shape:
        raise ContractError(f"shape mismatch: {samples.shape} vs {truth.shape}")
    mds, eigs = [], []
    excluded = 0
    for n, t, model in _fit_cells(samples, fit_cfg):
        if model is None:
            excluded += 1
            continue
        mds.append(tipping_md(model, truth[n, t]))
        cov = mixture_covariance(model)
        eigs.append(float(np.abs(np.linalg.eigvalsh(cov)).max()))
    amd_val = float(np.mean(mds)) if mds else float("nan")
    amv_val = float(np.mean(eigs)) if eigs else float("nan")
    return CellMetric(amd_val, excluded), CellMetric(amv_val, excluded)


def amd(samples, truth, fit_cfg=FitConfig()):
    """Average Mahalanobis distance over (agent, timestep) cells."""
    result, _ = amd_amv(samples, truth, fit_cfg)
    return result


def amv(samples, fit_cfg=FitConfig()):
    """Average largest-magnitude mixture-covariance eigenvalue (m^2)."""
    samples = np.asarray(samples, dtype=float)
    dummy_truth = np.zeros(samples.shape[1:], dtype=float)
    _, result = amd_amv(samples, dummy_truth, fit_cfg)
    return result


def ensemble_md(ensemble_mean, ensemble_cov, truth, covariance_floor=1e-6):
    """Classical Mahalanobis distance from per-cell ensemble statistics.

    The deterministic-model path: no mixture fit, the ensemble mean and
    covariance plug straight into the distance. Singular covariances are
    floored by eigenvalue clipping.
    """
    mean = np.asarray(ensemble_mean, dtype=float)
    cov = np.asarray(ensemble_cov, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if mean.shape != truth.shape or cov.shape != mean.shape[:2] + (2, 2):
        raise ContractError("ensemble statistics shapes inconsistent with truth")
    n_agents, t_pred = mean.shape[:2]
    total = 0.0
    for n in range(n_agents):
        for t in range(t_pred):
            c = cov[n, t]
            vals, vecs = np.linalg.eigh(0.5 * (c + c.T))
            vals = np.maximum(vals, covariance_floor)
            total += classical_md(mean[n, t], (vecs * vals) @ vecs.T, truth[n, t])
    return total / (n_agents * t_pred)


@dataclass
class EvalConfig:
    fit_cfg: FitConfig = field(default_factory=FitConfig)
    kde_cfg: KdeConfig = field(default_factory=KdeConfig)
    bon_scope: str = "agent"


def evaluate(scene, preds, cfg=EvalConfig(), amd_preds=None):
    """All five metrics plus the (AMD + AMV) / 2 summary for one scene.

    `amd_preds` optionally supplies a larger sample set for the mixture
    fits (AMD/AMV) than the one used for BoN/KDE, mirroring the common
    20-sample BoN versus 1000-sample fit protocol.
    """
    truth = scene.future
    if preds.samples.shape[1:] != truth.shape:
        raise ContractError(
            f"prediction shape {preds.samples.shape} does not match scene {truth.shape}"
        )
    bon = best_of_n(preds.samples, truth, scope=cfg.bon_scope)
    kde = kde_nll(preds.samples, truth, cfg.kde_cfg)
    fit_samples = preds.samples if amd_preds is None else amd_preds.samples
    amd_r, amv_r = amd_amv(fit_samples, truth, cfg.fit_cfg)
    return MetricReport(
        ade=bon.ade,
        fde=bon.fde,
        kde_nll=kde.nll,
        amd=amd_r.value,
        amv=amv_r.value,
        excluded_cells=amd_r.excluded_cells,
        kde_fallbacks=kde.fallback_cells,
    )
