"""CSV exchange format for prediction sample sets.

Header: sample,agent,t,x,y (an optional leading `scene` column supports
multi-scene files; absent means scene 0). One row per sampled position.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ContractError, DataError
from .metrics import PredictionSet


def save_predictions_csv(prediction_sets, path):
    """Write one or more PredictionSets, tagged with their scene index."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "sample", "agent", "t", "x", "y"])
        for scene_i, ps in enumerate(prediction_sets):
            s_count, n_agents, t_pred, _ = ps.samples.shape
            for s in range(s_count):
                for n in range(n_agents):
                    for t in range(t_pred):
                        x, y = ps.samples[s, n, t]
                        # repr of a Python float round-trips exactly
                        writer.writerow([scene_i, s, n, t, repr(float(x)), repr(float(y))])


def load_predictions_csv(path):
    """Read a predictions file into a list of PredictionSet, one per scene."""
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise ContractError(f"{path}: empty predictions file") from exc
        header = [h.strip().lower() for h in header]
        if header == ["sample", "agent", "t", "x", "y"]:
            has_scene = False
        elif header == ["scene", "sample", "agent", "t", "x", "y"]:
            has_scene = True
        else:
            raise ContractError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ContractError(f"{path}: line {lineno}: {exc}") from exc
            if has_scene:
                scene, s, n, t = (int(v) for v in vals[:4])
                x, y = vals[4], vals[5]
            else:
                scene = 0
                s, n, t = (int(v) for v in vals[:3])
                x, y = vals[3], vals[4]
            cells[(scene, s, n, t)] = (x, y)
    if not cells:
        raise ContractError(f"{path}: no prediction rows")
    scenes = sorted({k[0] for k in cells})
    out = []
    for scene in scenes:
        keys = [k for k in cells if k[0] == scene]
        s_max = max(k[1] for k in keys)
        n_max = max(k[2] for k in keys)
        t_max = max(k[3] for k in keys)
        arr = np.full((s_max + 1, n_max + 1, t_max + 1, 2), np.nan)
        for (_, s, n, t), (x, y) in ((k, cells[k]) for k in keys):
            arr[s, n, t] = (x, y)
        if np.isnan(arr).any():
            raise DataError(f"{path}: scene {scene} has missing (sample, agent, t) cells")
        out.append(PredictionSet(samples=arr, scene_ref=str(scene)))
    return out
