"""Tiny zone-routed convolutional trajectory predictor with manual gradients.

Agents are partitioned into four speed bands ("zones"); each zone has its
own prediction cell. A cell mixes a per-agent local stream (1-D convs)
with a cross-agent global stream (2-D convs), combined by three learned
scalars (noise, local and global weights, all initialized to zero). The
model predicts per-step displacements that are cumulatively summed from
the last observed position.

All forward passes cache what the hand-written backward passes need; no
autograd framework is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .nn import (
    conv1d,
    conv1d_backward,
    conv2d,
    conv2d_backward,
    relu,
    relu_backward,
)


@dataclass(frozen=True)
class ZoneConfig:
    """Speed thresholds (m/s) splitting agents into 4 zones, plus the
    per-zone standard deviation of the input noise."""

    boundaries: tuple = (0.01, 0.1, 1.2)
    noise_sigma: tuple = (0.05, 1.0, 4.0, 8.0)

    def __post_init__(self):
        if list(self.boundaries) != sorted(self.boundaries) or len(
            set(self.boundaries)
        ) != len(self.boundaries):
            raise DataError("zone boundaries must be strictly increasing")
        if len(self.noise_sigma) != len(self.boundaries) + 1:
            raise DataError("need one noise sigma per zone")

    @classmethod
    def eth(cls):
        """ETH-scene noise override."""
        return cls(noise_sigma=(0.175, 1.5, 4.0, 8.0))

    @property
    def n_zones(self):
        return len(self.noise_sigma)


def assign_zones(scene, zone_cfg=ZoneConfig()):
    """Partition agent indices by maximum observed speed.

    Speed is the max over consecutive observed steps of |delta position|
    divided by the frame stride. Zone intervals are half-open [lo, hi);
    the last zone is unbounded above.
    """
    steps = np.diff(scene.observed, axis=1)  # (N, t_obs-1, 2)
    speeds = np.linalg.norm(steps, axis=2).max(axis=1) / scene.frame_stride_seconds
    zone_of = np.searchsorted(np.asarray(zone_cfg.boundaries), speeds, side="right")
    return [np.flatnonzero(zone_of == z) for z in range(zone_cfg.n_zones)]


# --- cell parameters ---------------------------------------------------------

SCALAR_KEYS = ("w_noise", "w_global", "w_local")


def _layer_shapes(p, t_obs, t_pred):
    return {
        "local.spatial.weight": (p, p, 3),
        "local.spatial.bias": (p,),
        "local.spatial_res.weight": (p, p, 1),
        "local.spatial_res.bias": (p,),
        "local.temporal.weight": (t_pred, t_obs, 3),
        "local.temporal.bias": (t_pred,),
        "local.temporal_res.weight": (t_pred, t_obs, 1),
        "local.temporal_res.bias": (t_pred,),
        "global.spatial.weight": (p, p, 3, 3),
        "global.spatial.bias": (p,),
        "global.spatial_res.weight": (p, p, 1, 1),
        "global.spatial_res.bias": (p,),
        "global.temporal.weight": (t_pred, t_obs, 3, 3),
        "global.temporal.bias": (t_pred,),
        "global.temporal_res.weight": (t_pred, t_obs, 1, 1),
        "global.temporal_res.bias": (t_pred,),
        "w_noise": (),
        "w_global": (),
        "w_local": (),
    }


class CellParams:
    """All learnable tensors of one cell plus matching gradient buffers."""

    def __init__(self, p=2, t_obs=8, t_pred=12, rng=None):
        self.p, self.t_obs, self.t_pred = p, t_obs, t_pred
        shapes = _layer_shapes(p, t_obs, t_pred)
        self.tensors = {}
        for key, shape in shapes.items():
            if key in SCALAR_KEYS or key.endswith(".bias") or rng is None:
                self.tensors[key] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = 1.0 / np.sqrt(fan_in)
                self.tensors[key] = rng.uniform(-bound, bound, size=shape)
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def n_parameters(self):
        return sum(v.size for v in self.tensors.values())


def cell_forward(cell, x, noise):
    """One cell pass: x, noise are (P, T_o, N_z); returns (out, cache).

    out is (P, T_p, N_z) displacement predictions for the zone's agents.
    """
    if x.shape[2] < 1:
        raise ContractError("cell input group must be non-empty")
    t = cell.tensors
    x2 = x + t["w_noise"] * noise
    # local stream: per-agent convs over the time axis, then time-as-channels
    ls_main = conv1d(x2, t["local.spatial.weight"], t["local.spatial.bias"])
    ls = relu(ls_main) + conv1d(
        x2, t["local.spatial_res.weight"], t["local.spatial_res.bias"]
    )
    lz = ls.transpose(1, 0, 2)  # (T_o, P, N)
    lt = conv1d(lz, t["local.temporal.weight"], t["local.temporal.bias"]) + conv1d(
        lz, t["local.temporal_res.weight"], t["local.temporal_res.bias"]
    )
    local = lt.transpose(1, 0, 2)  # (P, T_p, N)
    # global stream: same computation with 2-D convs over the (time, agent) grid
    gs_main = conv2d(x2, t["global.spatial.weight"], t["global.spatial.bias"])
    gs = relu(gs_main) + conv2d(
        x2, t["global.spatial_res.weight"], t["global.spatial_res.bias"]
    )
    gz = gs.transpose(1, 0, 2)  # (T_o, P, N)
    gt = conv2d(gz, t["global.temporal.weight"], t["global.temporal.bias"]) + conv2d(
        gz, t["global.temporal_res.weight"], t["global.temporal_res.bias"]
    )
    glob = gt.transpose(1, 0, 2)
    out = t["w_local"] * local + t["w_global"] * glob
    cache = {
        "x": x,
        "noise": noise,
        "x2": x2,
        "ls_main": ls_main,
        "lz": lz,
        "gs_main": gs_main,
        "gz": gz,
        "local": local,
        "global": glob,
    }
    return out, cache


def cell_backward(cell, cache, gout):
    """Accumulate exact parameter gradients into cell.grads; return d loss / d x."""
    t, g = cell.tensors, cell.grads
    g["w_local"] += np.sum(gout * cache["local"])
    g["w_global"] += np.sum(gout * cache["global"])
    # local stream
    g_lt = (t["w_local"] * gout).transpose(1, 0, 2)
    g_lz1, gw, gb = conv1d_backward(cache["lz"], t["local.temporal.weight"], g_lt)
    g["local.temporal.weight"] += gw
    g["local.temporal.bias"] += gb
    g_lz2, gw, gb = conv1d_backward(cache["lz"], t["local.temporal_res.weight"], g_lt)
    g["local.temporal_res.weight"] += gw
    g["local.temporal_res.bias"] += gb
    g_ls = (g_lz1 + g_lz2).transpose(1, 0, 2)
    g_ls_main = relu_backward(cache["ls_main"], g_ls)
    g_x2a, gw, gb = conv1d_backward(cache["x2"], t["local.spatial.weight"], g_ls_main)
    g["local.spatial.weight"] += gw
    g["local.spatial.bias"] += gb
    g_x2b, gw, gb = conv1d_backward(cache["x2"], t["local.spatial_res.weight"], g_ls)
    g["local.spatial_res.weight"] += gw
    g["local.spatial_res.bias"] += gb
    # global stream
    g_gt = (t["w_global"] * gout).transpose(1, 0, 2)
    g_gz1, gw, gb = conv2d_backward(cache["gz"], t["global.temporal.weight"], g_gt)
    g["global.temporal.weight"] += gw
    g["global.temporal.bias"] += gb
    g_gz2, gw, gb = conv2d_backward(cache["gz"], t["global.temporal_res.weight"], g_gt)
    g["global.temporal_res.weight"] += gw
    g["global.temporal_res.bias"] += gb
    g_gs = (g_gz1 + g_gz2).transpose(1, 0, 2)
    g_gs_main = relu_backward(cache["gs_main"], g_gs)
    g_x2c, gw, gb = conv2d_backward(cache["x2"], t["global.spatial.weight"], g_gs_main)
    g["global.spatial.weight"] += gw
    g["global.spatial.bias"] += gb
    g_x2d, gw, gb = conv2d_backward(cache["x2"], t["global.spatial_res.weight"], g_gs)
    g["global.spatial_res.weight"] += gw
    g["global.spatial_res.bias"] += gb
    g_x2 = g_x2a + g_x2b + g_x2c + g_x2d
    g["w_noise"] += np.sum(g_x2 * cache["noise"])
    return g_x2


# --- full model --------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    t_obs: int = 8
    t_pred: int = 12
    p: int = 2
    zone_cfg: ZoneConfig = field(default_factory=ZoneConfig)


class SocialImplicit:
    """Four prediction cells, one per speed zone."""

    def __init__(self, cfg=ModelConfig(), rng_seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(rng_seed)
        self.cells = [
            CellParams(cfg.p, cfg.t_obs, cfg.t_pred, rng)
            for _ in range(cfg.zone_cfg.n_zones)
        ]

    def n_parameters(self):
        return sum(c.n_parameters() for c in self.cells)

    def zero_grads(self):
        for c in self.cells:
            c.zero_grads()

    def parameter_items(self):
        for z, cell in enumerate(self.cells):
            for key in cell.tensors:
                yield z, key, cell.tensors[key]

    def flat_parameters(self):
        return np.concatenate([v.ravel() for _, _, v in self.parameter_items()])

    def flat_grads(self):
        return np.concatenate(
            [c.grads[k].ravel() for c in self.cells for k in c.tensors]
        )

    def set_flat_parameters(self, vec):
        offset = 0
        for cell in self.cells:
            for key in cell.tensors:
                size = cell.tensors[key].size
                cell.tensors[key][...] = vec[offset : offset + size].reshape(
                    cell.tensors[key].shape
                )
                offset += size
        if offset != len(vec):
            raise ContractError("flat parameter vector has wrong length")


def _relative_displacements(observed):
    rel = np.zeros_like(observed)
    rel[:, 1:] = np.diff(observed, axis=1)
    return rel


def model_forward(model, scene, rng):
    """Predict one stochastic sample for a scene.

    Returns (pred_abs (N, T_p, 2), cache). Agents are routed to their
    zone's cell with a zone-specific noise draw; the cell outputs are
    per-step displacements, cumulatively summed and anchored at the last
    observed position. Deterministic given the rng state.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if scene.t_obs != model.cfg.t_obs or scene.t_pred != model.cfg.t_pred:
        raise ContractError(
            f"scene horizons ({scene.t_obs}, {scene.t_pred}) do not match model"
        )
    zone_cfg = model.cfg.zone_cfg
    groups = assign_zones(scene, zone_cfg)
    rel = _relative_displacements(scene.observed)
    n, t_pred = scene.n_agents, model.cfg.t_pred
    pred_rel = np.zeros((n, t_pred, 2))
    zone_caches = []
    for z, idx in enumerate(groups):
        if len(idx) == 0:
            zone_caches.append(None)
            continue
        x = rel[idx].transpose(2, 1, 0)  # (P, T_o, N_z)
        noise = rng.normal(0.0, zone_cfg.noise_sigma[z], size=x.shape)
        out, cache = cell_forward(model.cells[z], x, noise)
        pred_rel[idx] = out.transpose(2, 1, 0)
        zone_caches.append(cache)
    pred_abs = scene.observed[:, -1:, :] + np.cumsum(pred_rel, axis=1)
    return pred_abs, {"groups": groups, "zones": zone_caches}


def model_backward(model, cache, g_abs):
    """Backpropagate d loss / d predicted-absolute-positions into model.grads."""
    # cumulative sum transpose: displacement t feeds every position t' >= t
    g_rel = np.cumsum(g_abs[:, ::-1], axis=1)[:, ::-1]
    for z, idx in enumerate(cache["groups"]):
        if cache["zones"][z] is None:
            continue
        gout = g_rel[idx].transpose(2, 1, 0)
        cell_backward(model.cells[z], cache["zones"][z], gout)


# --- social loss -------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    alpha_triplet: float = 1e-4
    alpha_gdistance: float = 1e-4
    alpha_gangle: float = 1e-4

    def __post_init__(self):
        if min(self.alpha_triplet, self.alpha_gdistance, self.alpha_gangle) < 0:
            raise DataError("loss weights must be non-negative")


def _wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def _geometry_terms(pred, truth):
    """Pairwise-distance and pairwise-heading losses on one sample.

    Both are averaged over timestep pairs (t, j > t) per agent, then over
    agents. Returns (gdist, gangle, grad_dist, grad_angle) with both
    gradients taken with respect to pred.
    """
    n_agents, t_pred, _ = pred.shape
    ti, tj = np.triu_indices(t_pred, k=1)
    n_pairs = len(ti)
    grad_dist = np.zeros_like(pred)
    grad_angle = np.zeros_like(pred)
    gdist_total = 0.0
    gangle_total = 0.0
    for a in range(n_agents):
        dp = pred[a, tj] - pred[a, ti]  # (pairs, 2)
        dt = truth[a, tj] - truth[a, ti]
        d_pred = np.linalg.norm(dp, axis=1)
        d_true = np.linalg.norm(dt, axis=1)
        gdist_total += np.abs(d_true - d_pred).mean()
        sign_d = np.sign(d_pred - d_true)
        safe = d_pred > 0.0
        unit = np.zeros_like(dp)
        unit[safe] = dp[safe] / d_pred[safe, None]
        pair_grad_d = sign_d[:, None] * unit / n_pairs
        np.add.at(grad_dist[a], tj, pair_grad_d)
        np.add.at(grad_dist[a], ti, -pair_grad_d)

        theta_pred = np.arctan2(dp[:, 1], dp[:, 0])
        theta_true = np.arctan2(dt[:, 1], dt[:, 0])
        diff = _wrap_angle(theta_true - theta_pred)
        gangle_total += np.abs(diff).mean()
        r2 = np.sum(dp**2, axis=1)
        safe = r2 > 0.0
        # d theta_pred / d (dx, dy) = (-dy, dx) / r^2; loss grad is -sign(diff)
        dtheta = np.zeros_like(dp)
        dtheta[safe, 0] = -dp[safe, 1] / r2[safe]
        dtheta[safe, 1] = dp[safe, 0] / r2[safe]
        pair_grad_a = -np.sign(diff)[:, None] * dtheta / n_pairs
        np.add.at(grad_angle[a], tj, pair_grad_a)
        np.add.at(grad_angle[a], ti, -pair_grad_a)
    return (
        gdist_total / n_agents,
        gangle_total / n_agents,
        grad_dist / n_agents,
        grad_angle / n_agents,
    )


@dataclass
class SocialLossResult:
    loss: float
    closest_index: int
    second_index: int
    farthest_index: int
    terms: dict
    sample_grads: dict  # sample index -> d loss / d sample, (N, T_p, 2)


def social_loss(samples, truth, weights=LossWeights()):
    """L1 reconstruction + triplet + geometric losses over m drawn samples.

    samples: (m, N, T_p, 2) with m >= 3. The anchor is the closest sample
    to the truth by L1 distance, the positive the second closest, the
    negative the farthest; ties break toward the lowest sample index with
    the three indices kept distinct.
    """
    samples = np.asarray(samples, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if samples.ndim != 4 or samples.shape[0] < 3:
        raise ContractError("need at least 3 samples of shape (m, N, T_p, 2)")
    if samples.shape[1:] != truth.shape:
        raise ContractError("sample shape does not match truth")
    dists = np.abs(samples - truth).sum(axis=(1, 2, 3))
    i1 = int(np.argmin(dists))
    masked = dists.copy()
    masked[i1] = np.inf
    i2 = int(np.argmin(masked))
    masked_far = dists.copy()
    masked_far[[i1, i2]] = -np.inf
    im = int(np.argmax(masked_far))
    s1, s2, sm = samples[i1], samples[i2], samples[im]

    recon = float(np.abs(truth - s1).sum())
    triplet = float(np.abs(s1 - s2).sum() - np.abs(s1 - sm).sum())
    gdist, gangle, g_dist, g_angle = _geometry_terms(s1, truth)

    a1, a2, a3 = weights.alpha_triplet, weights.alpha_gdistance, weights.alpha_gangle
    loss = recon + a1 * triplet + a2 * gdist + a3 * gangle

    grads = {i1: np.zeros_like(s1), i2: np.zeros_like(s1), im: np.zeros_like(s1)}
    grads[i1] += np.sign(s1 - truth)
    grads[i1] += a1 * (np.sign(s1 - s2) - np.sign(s1 - sm))
    grads[i2] += a1 * np.sign(s2 - s1)
    grads[im] += a1 * np.sign(s1 - sm)
    grads[i1] += a2 * g_dist + a3 * g_angle
    return SocialLossResult(
        loss=loss,
        closest_index=i1,
        second_index=i2,
        farthest_index=im,
        terms={"recon": recon, "triplet": triplet, "gdist": gdist, "gangle": gangle},
        sample_grads=grads,
    )


# --- checkpoints -------------------------------------------------------------


def checkpoint_dict(model, extra=None):
    """Flat JSON-serializable view of all parameter tensors plus config echo."""
    params = {}
    for z, key, value in model.parameter_items():
        params[f"zone{z + 1}.{key}"] = value.tolist()
    cfg = model.cfg
    out = {
        "params": params,
        "config": {
            "t_obs": cfg.t_obs,
            "t_pred": cfg.t_pred,
            "p": cfg.p,
            "zone_boundaries": list(cfg.zone_cfg.boundaries),
            "noise_sigma": list(cfg.zone_cfg.noise_sigma),
        },
    }
    if extra:
        out["extra"] = extra
    return out


def model_from_checkpoint_dict(d):
    cfg_d = d["config"]
    cfg = ModelConfig(
        t_obs=cfg_d["t_obs"],
        t_pred=cfg_d["t_pred"],
        p=cfg_d["p"],
        zone_cfg=ZoneConfig(
            boundaries=tuple(cfg_d["zone_boundaries"]),
            noise_sigma=tuple(cfg_d["noise_sigma"]),
        ),
    )
    model = SocialImplicit(cfg, rng_seed=0)
    for z, cell in enumerate(model.cells):
        for key in cell.tensors:
            cell.tensors[key][...] = np.array(d["params"][f"zone{z + 1}.{key}"])
    return model


def save_checkpoint(model, path, extra=None):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model, extra), fh)


def load_checkpoint(path):
    with open(path) as fh:
        return model_from_checkpoint_dict(json.load(fh))
