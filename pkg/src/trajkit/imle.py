"""Implicit maximum likelihood training loop for the prediction model.

Per batch: draw m conditioned samples with fresh noise, score the loss of
the sample closest to the ground truth, and take a plain SGD step. The
learning rate drops once at a configured epoch. Training is reproducible:
identical (dataset, config, seed) gives bitwise-identical parameters
under serial execution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TrainingDivergedError
from .gmm import FitConfig
from .metrics import (
    EvalConfig,
    MetricReport,
    PredictionSet,
    amd_amv,
    best_of_n,
    kde_nll,
)
from .socialimplicit import (
    LossWeights,
    SocialImplicit,
    model_backward,
    model_forward,
    social_loss,
)

LOG_FIELDS = ("epoch", "batch", "loss", "recon", "triplet", "gdist", "gangle", "lr")


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 50
    lr: float = 1.0
    lr_drop_epoch: int = 45
    lr_after_drop: float = 0.1
    batch_size: int = 128
    m_samples: int = 20
    rng_seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.m_samples < 3:
            raise ContractError("m_samples must be >= 3 for the triplet loss")
        if self.lr <= 0 or self.lr_after_drop <= 0:
            raise ContractError("learning rates must be positive")


@dataclass
class TrainResult:
    model: SocialImplicit
    log: list  # one dict per batch, LOG_FIELDS keys
    selected_indices: list  # (epoch, batch, scene, closest sample index)

    def epoch_losses(self):
        """Mean loss per epoch from the batch log."""
        sums, counts = {}, {}
        for row in self.log:
            sums[row["epoch"]] = sums.get(row["epoch"], 0.0) + row["loss"]
            counts[row["epoch"]] = counts.get(row["epoch"], 0) + 1
        return [sums[e] / counts[e] for e in sorted(sums)]


def _scene_step(model, scene, m_samples, weights, rng):
    """Forward m samples, score the social loss, backprop into model.grads.

    Gradients flow through the closest, second-closest and farthest
    samples; the argmin routing itself is non-differentiable. Returns the
    loss result.
    """
    samples = []
    caches = []
    for _ in range(m_samples):
        pred, cache = model_forward(model, scene, rng)
        samples.append(pred)
        caches.append(cache)
    result = social_loss(np.stack(samples), scene.future, weights)
    for idx, grad in result.sample_grads.items():
        model_backward(model, caches[idx], grad)
    return result


def train(dataset, cfg=TrainerConfig(), model=None):
    """Run the full training loop; returns TrainResult.

    Scene losses are averaged within a batch before the update. A
    non-finite loss aborts with a term breakdown.
    """
    if not dataset:
        raise ContractError("dataset must be non-empty")
    if model is None:
        model = SocialImplicit(rng_seed=cfg.rng_seed)
    rng = np.random.default_rng(cfg.rng_seed)
    log = []
    selected = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr if epoch < cfg.lr_drop_epoch else cfg.lr_after_drop
        order = rng.permutation(len(dataset))
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            model.zero_grads()
            terms = {k: 0.0 for k in ("loss", "recon", "triplet", "gdist", "gangle")}
            for scene_i in batch:
                result = _scene_step(
                    model, dataset[scene_i], cfg.m_samples, cfg.loss_weights, rng
                )
                terms["loss"] += result.loss
                for k in ("recon", "triplet", "gdist", "gangle"):
                    terms[k] += result.terms[k]
                selected.append((epoch, b, int(scene_i), result.closest_index))
            scale = 1.0 / len(batch)
            terms = {k: v * scale for k, v in terms.items()}
            if not np.isfinite(terms["loss"]):
                raise TrainingDivergedError(epoch, b, terms)
            for cell in model.cells:
                for key in cell.tensors:
                    cell.tensors[key] -= lr * scale * cell.grads[key]
            log.append({"epoch": epoch, "batch": b, "lr": lr, **terms})
    return TrainResult(model=model, log=log, selected_indices=selected)


def write_training_log(log, path):
    """CSV log: epoch,batch,loss,recon,triplet,gdist,gangle,lr."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in log:
            writer.writerow({k: row[k] for k in LOG_FIELDS})


@dataclass
class CheckpointEvalConfig:
    n_bon_samples: int = 20
    n_fit_samples: int = 1000
    rng_seed: int = 0
    eval_cfg: EvalConfig = field(default_factory=EvalConfig)


def draw_prediction_set(model, scene, count, rng):
    """Stack `count` stochastic forward passes into a PredictionSet."""
    samples = np.stack(
        [model_forward(model, scene, rng)[0] for _ in range(count)]
    )
    return PredictionSet(samples=samples)


def evaluate_checkpoint(model, scenes, cfg=CheckpointEvalConfig()):
    """Aggregate MetricReport over scenes; deterministic given the seed.

    BoN ADE/FDE and KDE use n_bon_samples draws; the mixture fits behind
    AMD/AMV use n_fit_samples draws, matching the common protocol of 20
    evaluation samples versus 1000 fitting samples.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    per_scene = []
    for i, scene in enumerate(scenes):
        bon_set = draw_prediction_set(model, scene, cfg.n_bon_samples, rng)
        fit_set = draw_prediction_set(model, scene, cfg.n_fit_samples, rng)
        bon = best_of_n(bon_set.samples, scene.future, scope=cfg.eval_cfg.bon_scope)
        kde = kde_nll(bon_set.samples, scene.future, cfg.eval_cfg.kde_cfg)
        amd_r, amv_r = amd_amv(fit_set.samples, scene.future, cfg.eval_cfg.fit_cfg)
        per_scene.append(
            {
                "scene": i,
                "n_agents": scene.n_agents,
                "ade": bon.ade,
                "fde": bon.fde,
                "kde_nll": kde.nll,
                "amd": amd_r.value,
                "amv": amv_r.value,
                "excluded_cells": amd_r.excluded_cells,
                "kde_fallbacks": kde.fallback_cells,
            }
        )
    return aggregate_reports(per_scene)


def aggregate_reports(per_scene):
    """Mean metrics over per-scene rows, weighted by agent count."""
    if not per_scene:
        raise ContractError("no scenes to aggregate")
    weights = np.array([row["n_agents"] for row in per_scene], dtype=float)
    weights /= weights.sum()

    def wmean(key):
        vals = np.array([row[key] for row in per_scene], dtype=float)
        mask = np.isfinite(vals)
        if not mask.any():
            return float("nan")
        return float((vals[mask] * weights[mask]).sum() / weights[mask].sum())

    return MetricReport(
        ade=wmean("ade"),
        fde=wmean("fde"),
        kde_nll=wmean("kde_nll"),
        amd=wmean("amd"),
        amv=wmean("amv"),
        excluded_cells=int(sum(row["excluded_cells"] for row in per_scene)),
        kde_fallbacks=int(sum(row["kde_fallbacks"] for row in per_scene)),
        per_scene=per_scene,
    )


# re-export for CLI convenience
__all__ = [
    "TrainerConfig",
    "TrainResult",
    "train",
    "write_training_log",
    "CheckpointEvalConfig",
    "draw_prediction_set",
    "evaluate_checkpoint",
    "aggregate_reports",
    "FitConfig",
]
