"""Synthetic studies: shift sensitivity, kernel choice, mixture-fit convergence.

The mixture families for the kernel study are a documented, fixed choice
(single Gaussian, two-component mixture, uniform-like cloud, offset
near-point-mass, ring); only the qualitative claim that kernel choice
changes the score and the resulting rankings is asserted anywhere.
"""

from __future__ import annotations

import numpy as np

from .gmm import FitConfig, mixture_covariance, mixture_mean, select_by_bic
from .mahalanobis import tipping_md
from .metrics import (
    VALID_KERNELS,
    EvalConfig,
    KdeConfig,
    PredictionSet,
    amd_amv,
    best_of_n,
    kde_nll,
)

# --- shift sensitivity -------------------------------------------------------

DEFAULT_SHIFTS = (-0.10, -0.01, 0.01, 0.10)


def _shift_samples(samples, delta, axis):
    shifted = samples.copy()
    if axis in ("x", "both"):
        shifted[..., 0] += delta
    if axis in ("y", "both"):
        shifted[..., 1] += delta
    return shifted


def sensitivity_rows(scenes, prediction_sets, shifts=DEFAULT_SHIFTS, axis="x",
                     cfg=EvalConfig()):
    """Recompute all metrics under rigid sample shifts.

    Returns one row per shift (the unshifted baseline first) with metric
    values and deltas against the baseline, aggregated over scenes by
    agent-weighted mean.
    """
    rows = []
    for delta in [0.0] + [s for s in shifts if s != 0.0]:
        acc = {"ade": 0.0, "fde": 0.0, "kde_nll": 0.0, "amd": 0.0, "amv": 0.0}
        weight_total = 0.0
        excluded = 0
        for scene, ps in zip(scenes, prediction_sets):
            samples = _shift_samples(ps.samples, delta, axis)
            bon = best_of_n(samples, scene.future, scope=cfg.bon_scope)
            kde = kde_nll(samples, scene.future, cfg.kde_cfg)
            amd_r, amv_r = amd_amv(samples, scene.future, cfg.fit_cfg)
            w = scene.n_agents
            weight_total += w
            acc["ade"] += w * bon.ade
            acc["fde"] += w * bon.fde
            acc["kde_nll"] += w * kde.nll
            acc["amd"] += w * amd_r.value
            acc["amv"] += w * amv_r.value
            excluded += amd_r.excluded_cells
        row = {k: v / weight_total for k, v in acc.items()}
        row["shift"] = delta
        row["excluded_cells"] = excluded
        rows.append(row)
    baseline = rows[0]
    for row in rows:
        for key in ("ade", "fde", "kde_nll", "amd", "amv"):
            row[f"d_{key}"] = row[key] - baseline[key]
    return rows


# --- kernel sensitivity ------------------------------------------------------


def _family_gaussian(rng, n):
    return rng.normal(0.0, 0.5, size=(n, 2))


def _family_two_mode(rng, n):
    centers = np.array([[-1.0, 0.0], [1.0, 0.0]])
    labels = rng.integers(0, 2, size=n)
    return centers[labels] + rng.normal(0.0, 0.3, size=(n, 2))


def _family_uniform(rng, n):
    return rng.uniform(-1.0, 1.0, size=(n, 2))


def _family_offset_point_mass(rng, n):
    # tight cloud away from the truth point; compact kernels lose its support
    return np.array([0.3, 0.3]) + rng.normal(0.0, 1e-3, size=(n, 2))


def _family_ring(rng, n):
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radius = 1.0 + rng.normal(0.0, 0.05, size=n)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


MIXTURE_FAMILIES = {
    "gaussian": _family_gaussian,
    "two_mode_gmm": _family_two_mode,
    "uniform": _family_uniform,
    "offset_point_mass": _family_offset_point_mass,
    "ring": _family_ring,
}


def kernel_sensitivity_rows(n_samples=1000, seed=0, kernels=VALID_KERNELS,
                            bandwidth_rule="scott"):
    """KDE-NLL of a fixed truth point (the origin) under each kernel.

    One row per mixture family with a column per kernel.
    """
    truth = np.zeros((1, 1, 2))
    rows = []
    for fam_i, (family, sampler) in enumerate(MIXTURE_FAMILIES.items()):
        rng = np.random.default_rng([seed, fam_i])
        cloud = sampler(rng, n_samples)[:, None, None, :]
        row = {"family": family}
        for kernel in kernels:
            cfg = KdeConfig(kernel=kernel, bandwidth_rule=bandwidth_rule)
            row[kernel] = kde_nll(cloud, truth, cfg).nll
        rows.append(row)
    return rows


# --- mixture-fit convergence -------------------------------------------------

CONVERGENCE_COUNTS = (10, 30, 100, 300, 1000, 3000)
_TRUE_MEAN = np.array([0.5, -0.3])
_TRUE_COV = np.array([[1.0, 0.3], [0.3, 0.6]])
_TEST_POINT = np.array([2.0, 1.0])


def gmm_convergence_rows(counts=CONVERGENCE_COUNTS, replicates=20, seed=0,
                         fit_cfg=None):
    """Fit errors and test-point distance versus sample count.

    Samples come from a fixed true Gaussian; per count, the mixture-level
    mean/covariance errors and the generalized Mahalanobis distance of a
    fixed test point are averaged over replicate fits.
    """
    if fit_cfg is None:
        fit_cfg = FitConfig(k_candidates=(1, 2, 3))
    rows = []
    for count in counts:
        mean_errs, cov_errs, mds = [], [], []
        for rep in range(replicates):
            rng = np.random.default_rng([seed, count, rep])
            points = rng.multivariate_normal(_TRUE_MEAN, _TRUE_COV, size=count)
            model = select_by_bic(points, fit_cfg)
            mean_errs.append(float(np.linalg.norm(mixture_mean(model) - _TRUE_MEAN)))
            cov_errs.append(
                float(np.linalg.norm(mixture_covariance(model) - _TRUE_COV))
            )
            mds.append(tipping_md(model, _TEST_POINT))
        rows.append(
            {
                "n_samples": count,
                "mean_error": float(np.mean(mean_errs)),
                "cov_error": float(np.mean(cov_errs)),
                "md": float(np.mean(mds)),
            }
        )
    return rows


def make_bimodal_toy(n_scenes, seed, jitter=0.02):
    """Single-agent scenes: straight observation, future turning up or down.

    Scenes alternate between a +y and a -y turn after an identical straight
    walk along x; `jitter` adds Gaussian noise to the future. Used by the
    mode-coverage training study and its tests.
    """
    from .trajdata import Scene

    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        start = rng.uniform(-1, 1, size=2)
        obs = start + np.arange(8)[:, None] * np.array([0.12, 0.0])
        turn = 1 if i % 2 == 0 else -1
        fut = obs[-1] + np.arange(1, 13)[:, None] * np.array([0.12, turn * 0.06])
        fut = fut + rng.normal(0, jitter, size=fut.shape)
        scenes.append(Scene(observed=obs[None], future=fut[None]))
    return scenes


def bimodal_mode_truths(scene):
    """Both mode ground truths (turn up, turn down) for a bimodal-toy scene."""
    obs_last = scene.observed[0, -1]
    t = np.arange(1, 13)[:, None]
    return [obs_last + t * np.array([0.12, s * 0.06]) for s in (1, -1)]


def make_wide_cloud_scene_and_preds(n_agents=2, t_obs=8, t_pred=12, s_samples=20,
                                    sigma=1.0, seed=0):
    """Synthetic wide prediction cloud centered on the truth.

    Ground-truth future is a straight walk; each sample is the truth plus
    isotropic noise of the given sigma. Used by the shift-sensitivity
    study and its tests.
    """
    from .trajdata import Scene

    rng = np.random.default_rng(seed)
    base = np.zeros((n_agents, t_obs + t_pred, 2))
    for a in range(n_agents):
        start = np.array([float(a), 0.0])
        step = np.array([0.1, 0.05 * (a + 1)])
        base[a] = start + np.arange(t_obs + t_pred)[:, None] * step
    scene = Scene(
        observed=base[:, :t_obs],
        future=base[:, t_obs:],
        agent_ids=list(range(n_agents)),
    )
    noise = rng.normal(0.0, sigma, size=(s_samples, n_agents, t_pred, 2))
    noise -= noise.mean(axis=0, keepdims=True)  # truth sits exactly at cloud center
    return scene, PredictionSet(samples=scene.future[None] + noise)
