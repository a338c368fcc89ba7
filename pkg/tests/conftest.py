"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from trajkit.gmm import GmmModel, bic_score
from trajkit.trajdata import Scene


def random_pd_cov(rng, scale=1.0):
    """Random symmetric positive-definite 2x2 covariance."""
    a = rng.normal(0.0, scale, size=(2, 2))
    return a @ a.T + 0.05 * scale**2 * np.eye(2)


def random_mixture(rng, k_max=3):
    """Random valid GmmModel with 1..k_max components."""
    k = int(rng.integers(1, k_max + 1))
    weights = rng.dirichlet(np.ones(k))
    means = rng.normal(0.0, 2.0, size=(k, 2))
    covs = np.stack([random_pd_cov(rng) for _ in range(k)])
    ll = 0.0
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        log_likelihood=ll,
        bic=bic_score(ll, k, 100),
        n_points=100,
    )


def straight_scene(n_agents=2, t_obs=8, t_pred=12, step=(0.1, 0.05)):
    """Agents walking in straight lines; agent a starts at (a, 0)."""
    base = np.zeros((n_agents, t_obs + t_pred, 2))
    for a in range(n_agents):
        start = np.array([float(a), 0.0])
        base[a] = start + np.arange(t_obs + t_pred)[:, None] * (
            np.asarray(step) * (a + 1)
        )
    return Scene(
        observed=base[:, :t_obs],
        future=base[:, t_obs:],
        agent_ids=list(range(n_agents)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
