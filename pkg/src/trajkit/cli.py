"""Command-line entry point: eval, sensitivity, synth and train.

Exit codes: 0 success, 2 partial mixture-fit failures (report still
written), 1 hard errors. Every data artifact embeds or sits next to its
run manifest; wall-clock timings go to a separate .timing.json sidecar so
the data outputs stay bit-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import figures
from .errors import TrajkitError
from .gmm import FitConfig
from .imle import (
    CheckpointEvalConfig,
    TrainerConfig,
    aggregate_reports,
    train,
    write_training_log,
)
from .manifest import build_manifest, write_manifest, write_timing
from .metrics import (
    VALID_KERNELS,
    EvalConfig,
    KdeConfig,
    amd_amv,
    best_of_n,
    kde_nll,
)
from .predictions_io import load_predictions_csv
from .socialimplicit import LossWeights, ZoneConfig, save_checkpoint
from .studies import (
    DEFAULT_SHIFTS,
    gmm_convergence_rows,
    kernel_sensitivity_rows,
    sensitivity_rows,
)
from .trajdata import load_scenes

SENSITIVITY_FIELDS = (
    "shift", "ade", "fde", "kde_nll", "amd", "amv",
    "d_ade", "d_fde", "d_kde_nll", "d_amd", "d_amv", "excluded_cells",
)


def _require_file(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _eval_config(args):
    k_candidates = tuple(range(1, args.k_max + 1))
    bandwidth = args.bandwidth
    if bandwidth not in ("scott", "silverman"):
        bandwidth = float(bandwidth)
    return EvalConfig(
        fit_cfg=FitConfig(k_candidates=k_candidates, rng_seed=args.seed),
        kde_cfg=KdeConfig(kernel=args.kernel, bandwidth_rule=bandwidth),
        bon_scope=args.bon_scope,
    )


def _load_inputs(args):
    scenes = load_scenes(_require_file(args.scenes))
    preds = load_predictions_csv(_require_file(args.preds))
    if len(preds) != len(scenes):
        raise TrajkitError(
            f"{len(preds)} prediction scenes vs {len(scenes)} scenes in {args.scenes}"
        )
    return scenes, preds


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fieldnames})


def cmd_eval(args):
    started = time.perf_counter()
    scenes, preds = _load_inputs(args)
    cfg = _eval_config(args)
    per_scene = []
    for i, (scene, ps) in enumerate(zip(scenes, preds)):
        bon = best_of_n(ps.samples, scene.future, scope=cfg.bon_scope)
        kde = kde_nll(ps.samples, scene.future, cfg.kde_cfg)
        amd_r, amv_r = amd_amv(ps.samples, scene.future, cfg.fit_cfg)
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
    report = aggregate_reports(per_scene)
    manifest = build_manifest(
        "eval",
        {
            "k_max": args.k_max,
            "kernel": args.kernel,
            "bandwidth": args.bandwidth,
            "bon_scope": args.bon_scope,
        },
        [args.scenes, args.preds],
        args.seed,
    )
    payload = report.to_dict()
    payload["manifest"] = manifest
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.per_scene_csv:
        fields = (
            "scene", "n_agents", "ade", "fde", "kde_nll", "amd", "amv",
            "excluded_cells", "kde_fallbacks",
        )
        _write_csv(args.per_scene_csv, fields, per_scene)
        write_manifest(manifest, args.per_scene_csv + ".manifest.json")
    if args.figures:
        figures.render_eval_report(per_scene, args.figures)
    write_timing(args.out + ".timing.json", time.perf_counter() - started)
    return 2 if report.excluded_cells > 0 else 0


def cmd_sensitivity(args):
    started = time.perf_counter()
    scenes, preds = _load_inputs(args)
    cfg = _eval_config(args)
    shifts = tuple(float(s) for s in args.shifts.split(","))
    rows = sensitivity_rows(scenes, preds, shifts=shifts, axis=args.axis, cfg=cfg)
    _write_csv(args.out, SENSITIVITY_FIELDS, rows)
    manifest = build_manifest(
        "sensitivity",
        {
            "shifts": list(shifts),
            "axis": args.axis,
            "k_max": args.k_max,
            "kernel": args.kernel,
            "bandwidth": args.bandwidth,
            "bon_scope": args.bon_scope,
        },
        [args.scenes, args.preds],
        args.seed,
    )
    write_manifest(manifest, args.out + ".manifest.json")
    if args.figures:
        figures.render_sensitivity(rows, args.figures)
    write_timing(args.out + ".timing.json", time.perf_counter() - started)
    return 2 if any(row["excluded_cells"] for row in rows) else 0


def cmd_synth(args):
    started = time.perf_counter()
    if args.study == "kernel-sensitivity":
        rows = kernel_sensitivity_rows(n_samples=args.samples, seed=args.seed)
        fields = ("family",) + tuple(VALID_KERNELS)
        _write_csv(args.out, fields, rows)
        if args.figures:
            figures.render_kernel_study(rows, list(VALID_KERNELS), args.figures)
    else:  # gmm-convergence
        fit_cfg = FitConfig(k_candidates=tuple(range(1, args.k_max + 1)),
                            rng_seed=args.seed)
        rows = gmm_convergence_rows(seed=args.seed, fit_cfg=fit_cfg,
                                    replicates=args.replicates)
        _write_csv(args.out, ("n_samples", "mean_error", "cov_error", "md"), rows)
        if args.figures:
            figures.render_convergence_study(rows, args.figures)
    manifest = build_manifest(
        "synth",
        {
            "study": args.study,
            "samples": args.samples,
            "k_max": args.k_max,
            "replicates": args.replicates,
        },
        [],
        args.seed,
    )
    write_manifest(manifest, args.out + ".manifest.json")
    write_timing(args.out + ".timing.json", time.perf_counter() - started)
    return 0


def cmd_train(args):
    started = time.perf_counter()
    scenes = load_scenes(_require_file(args.scenes))
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = TrainerConfig(
        epochs=args.epochs,
        lr=args.lr,
        lr_drop_epoch=args.lr_drop_epoch,
        lr_after_drop=args.lr_after_drop,
        batch_size=args.batch_size,
        m_samples=args.m_samples,
        rng_seed=args.seed,
        loss_weights=LossWeights(alpha_gdistance=args.alpha_gdistance),
    )
    from .socialimplicit import ModelConfig, SocialImplicit

    zone_cfg = ZoneConfig.eth() if args.eth_noise else ZoneConfig()
    model = SocialImplicit(ModelConfig(zone_cfg=zone_cfg), rng_seed=args.seed)
    result = train(scenes, cfg, model=model)
    manifest = build_manifest(
        "train",
        {
            "epochs": args.epochs,
            "lr": args.lr,
            "lr_drop_epoch": args.lr_drop_epoch,
            "lr_after_drop": args.lr_after_drop,
            "batch_size": args.batch_size,
            "m_samples": args.m_samples,
            "eth_noise": args.eth_noise,
            "alpha_gdistance": args.alpha_gdistance,
        },
        [args.scenes],
        args.seed,
    )
    save_checkpoint(result.model, os.path.join(args.out_dir, "checkpoint.json"),
                    extra={"manifest": manifest})
    write_training_log(result.log, os.path.join(args.out_dir, "train_log.csv"))
    write_manifest(manifest, os.path.join(args.out_dir, "manifest.json"))
    if args.figures:
        figures.render_training_curve(result.epoch_losses(), args.figures)
    write_timing(os.path.join(args.out_dir, "timing.json"),
                 time.perf_counter() - started)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trajkit",
        description="Trajectory prediction evaluation, sensitivity studies and training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_eval_flags(p):
        p.add_argument("--scenes", required=True, help="scenes.json input")
        p.add_argument("--preds", required=True, help="predictions CSV input")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--k-max", type=int, default=5, dest="k_max")
        p.add_argument("--kernel", default="gaussian", choices=VALID_KERNELS)
        p.add_argument("--bandwidth", default="scott",
                       help="scott | silverman | fixed value in meters")
        p.add_argument("--bon-scope", default="agent", choices=("agent", "scene"),
                       dest="bon_scope")
        p.add_argument("--figures", default=None, help="optional PNG output path")

    p_eval = sub.add_parser("eval", help="score a predictions file")
    common_eval_flags(p_eval)
    p_eval.add_argument("--per-scene", dest="per_scene_csv", default=None,
                        help="optional per-scene CSV output")
    p_eval.set_defaults(func=cmd_eval)

    p_sens = sub.add_parser("sensitivity", help="metric response to sample shifts")
    common_eval_flags(p_sens)
    p_sens.add_argument("--shifts", default=",".join(str(s) for s in DEFAULT_SHIFTS))
    p_sens.add_argument("--axis", default="x", choices=("x", "y", "both"))
    p_sens.set_defaults(func=cmd_sensitivity)

    p_synth = sub.add_parser("synth", help="synthetic metric studies")
    p_synth.add_argument("--study", required=True,
                         choices=("kernel-sensitivity", "gmm-convergence"))
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--samples", type=int, default=1000)
    p_synth.add_argument("--k-max", type=int, default=3, dest="k_max")
    p_synth.add_argument("--replicates", type=int, default=20)
    p_synth.add_argument("--figures", default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train the prediction model")
    p_train.add_argument("--scenes", required=True)
    p_train.add_argument("--out-dir", required=True, dest="out_dir")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--lr", type=float, default=1.0)
    p_train.add_argument("--lr-drop-epoch", type=int, default=45, dest="lr_drop_epoch")
    p_train.add_argument("--lr-after-drop", type=float, default=0.1,
                         dest="lr_after_drop")
    p_train.add_argument("--batch-size", type=int, default=128, dest="batch_size")
    p_train.add_argument("--m-samples", type=int, default=20, dest="m_samples")
    p_train.add_argument("--eth-noise", action="store_true", dest="eth_noise")
    p_train.add_argument("--alpha-gdistance", type=float, default=1e-4,
                         dest="alpha_gdistance")
    p_train.add_argument("--figures", default=None)
    p_train.set_defaults(func=cmd_train)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrajkitError, FileNotFoundError, ValueError) as exc:
        print(f"trajkit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
