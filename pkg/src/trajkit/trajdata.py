"""ETH/UCY-style track ingestion, scene windowing and augmentation.

Track files are plain text, one observation per line:

    frame_id agent_id x y

separated by whitespace (tabs or spaces). Coordinates are world meters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrackParseError, UnsupportedOperationError

DEFAULT_STRIDE_SECONDS = 0.4  # ETH/UCY convention: annotations every 0.4 s


@dataclass(frozen=True)
class RawTrack:
    """One observation of one agent at one frame."""

    frame_id: int
    agent_id: int
    x: float
    y: float

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window parameters, all in steps."""

    t_obs: int = 8
    t_pred: int = 12
    stride: int = 1

    def __post_init__(self):
        if self.t_obs < 2:
            raise DataError("t_obs must be >= 2 (speed needs two points)")
        if self.t_pred < 1:
            raise DataError("t_pred must be >= 1")
        if self.stride < 1:
            raise DataError("stride must be >= 1")


@dataclass
class Scene:
    """One windowed block of agents on a common time grid.

    observed: (N, t_obs, 2) meters, future: (N, t_pred, 2) meters.
    """

    observed: np.ndarray
    future: np.ndarray
    agent_ids: list = field(default_factory=list)
    frame_stride_seconds: float = DEFAULT_STRIDE_SECONDS

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=float)
        self.future = np.asarray(self.future, dtype=float)
        if self.observed.ndim != 3 or self.observed.shape[2] != 2:
            raise DataError("observed must have shape (N, t_obs, 2)")
        if self.future.ndim != 3 or self.future.shape[2] != 2:
            raise DataError("future must have shape (N, t_pred, 2)")
        if self.observed.shape[0] != self.future.shape[0]:
            raise DataError("observed and future agent counts differ")
        if self.observed.shape[0] < 1:
            raise DataError("scene needs at least one agent")
        if self.observed.shape[1] < 2:
            raise DataError("scene needs t_obs >= 2")
        if not (np.isfinite(self.observed).all() and np.isfinite(self.future).all()):
            raise DataError("scene positions must be finite")
        if self.frame_stride_seconds <= 0:
            raise DataError("frame_stride_seconds must be positive")

    @property
    def n_agents(self):
        return self.observed.shape[0]

    @property
    def t_obs(self):
        return self.observed.shape[1]

    @property
    def t_pred(self):
        return self.future.shape[1]

    def positions(self):
        """Concatenated (N, t_obs + t_pred, 2) positions."""
        return np.concatenate([self.observed, self.future], axis=1)


def parse_tracks(lines):
    """Parse a track text stream into a list of RawTrack.

    `lines` may be a file object, a string, or an iterable of lines.
    Raises TrackParseError for malformed lines and DataError for
    non-finite coordinates or duplicated (frame, agent) pairs.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    tracks = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise TrackParseError(lineno, f"expected 4 fields, got {len(parts)}")
        try:
            frame = int(float(parts[0]))
            agent = int(float(parts[1]))
            x = float(parts[2])
            y = float(parts[3])
        except ValueError as exc:
            raise TrackParseError(lineno, str(exc)) from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"line {lineno}: non-finite coordinate ({x}, {y})")
        key = (frame, agent)
        if key in seen:
            raise DataError(f"line {lineno}: duplicate (frame, agent) pair {key}")
        seen.add(key)
        tracks.append(RawTrack(frame, agent, x, y))
    return tracks


def make_scenes(tracks, cfg, stride_seconds=DEFAULT_STRIDE_SECONDS):
    """Window tracks into scenes of t_obs observed + t_pred future steps.

    Windows slide over the ordered list of distinct frame ids, advancing by
    cfg.stride. Only agents present at every step of a window are kept;
    windows with no qualifying agent are dropped. Deterministic.
    """
    if not tracks:
        return []
    frames = sorted({t.frame_id for t in tracks})
    by_agent = {}
    for t in tracks:
        by_agent.setdefault(t.agent_id, {})[t.frame_id] = (t.x, t.y)
    length = cfg.t_obs + cfg.t_pred
    agent_ids = sorted(by_agent)
    scenes = []
    for start in range(0, len(frames) - length + 1, cfg.stride):
        window = frames[start : start + length]
        present = [a for a in agent_ids if all(f in by_agent[a] for f in window)]
        if not present:
            continue
        block = np.array(
            [[by_agent[a][f] for f in window] for a in present], dtype=float
        )
        scenes.append(
            Scene(
                observed=block[:, : cfg.t_obs],
                future=block[:, cfg.t_obs :],
                agent_ids=list(present),
                frame_stride_seconds=stride_seconds,
            )
        )
    return scenes


# --- augmentations -----------------------------------------------------------


def rotate(scene, angle_rad):
    """Rotate all positions by one global 2-D rotation about the origin."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    rot = np.array([[c, -s], [s, c]])
    return Scene(
        observed=scene.observed @ rot.T,
        future=scene.future @ rot.T,
        agent_ids=list(scene.agent_ids),
        frame_stride_seconds=scene.frame_stride_seconds,
    )


def flip_xy(scene):
    """Exchange the x and y coordinates."""
    return Scene(
        observed=scene.observed[:, :, ::-1].copy(),
        future=scene.future[:, :, ::-1].copy(),
        agent_ids=list(scene.agent_ids),
        frame_stride_seconds=scene.frame_stride_seconds,
    )


def reverse(scene):
    """Play the trajectories backwards, swapping observed and future.

    Only defined when t_obs == t_pred; otherwise the horizons cannot swap.
    """
    if scene.t_obs != scene.t_pred:
        raise UnsupportedOperationError(
            f"reverse needs t_obs == t_pred, got {scene.t_obs} != {scene.t_pred}"
        )
    full = scene.positions()[:, ::-1]
    return Scene(
        observed=full[:, : scene.t_obs].copy(),
        future=full[:, scene.t_obs :].copy(),
        agent_ids=list(scene.agent_ids),
        frame_stride_seconds=scene.frame_stride_seconds,
    )


def jitter(scene, rng, half_width=0.01):
    """Add uniform noise in [-half_width, half_width] to every coordinate."""
    full = scene.positions()
    noisy = full + rng.uniform(-half_width, half_width, size=full.shape)
    return Scene(
        observed=noisy[:, : scene.t_obs],
        future=noisy[:, scene.t_obs :],
        agent_ids=list(scene.agent_ids),
        frame_stride_seconds=scene.frame_stride_seconds,
    )


def speed_scale(scene, factor):
    """Rescale all inter-step displacements by `factor`, anchored at step 0."""
    if factor <= 0:
        raise DataError("speed factor must be positive")
    full = scene.positions()
    anchored = full[:, :1] + factor * (full - full[:, :1])
    return Scene(
        observed=anchored[:, : scene.t_obs],
        future=anchored[:, scene.t_obs :],
        agent_ids=list(scene.agent_ids),
        frame_stride_seconds=scene.frame_stride_seconds,
    )


def merge_scenes(a, b):
    """Concatenate the agents of two scenes with matching windows.

    Scene b's agent ids are offset past scene a's maximum to stay unique.
    Windows are aligned index-to-index.
    """
    if a.t_obs != b.t_obs or a.t_pred != b.t_pred:
        raise UnsupportedOperationError("merged scenes must share window sizes")
    if a.frame_stride_seconds != b.frame_stride_seconds:
        raise UnsupportedOperationError("merged scenes must share frame stride")
    offset = max(a.agent_ids) + 1 if a.agent_ids else 0
    return Scene(
        observed=np.concatenate([a.observed, b.observed]),
        future=np.concatenate([a.future, b.future]),
        agent_ids=list(a.agent_ids) + [i + offset for i in b.agent_ids],
        frame_stride_seconds=a.frame_stride_seconds,
    )


def augment(scene, ops, rng_seed=0, other=None):
    """Apply a sequence of named augmentations with seeded randomness.

    Each op is a name or (name, kwargs) pair. Supported names: "rotate"
    (random angle within +-15 degrees unless angle_rad given), "flip",
    "reverse", "jitter" (half_width), "speed" (random factor in [0.8, 1.2]
    unless factor given) and "merge" (needs `other` scene).
    """
    rng = np.random.default_rng(rng_seed)
    out = scene
    for op in ops:
        name, kwargs = (op, {}) if isinstance(op, str) else (op[0], dict(op[1]))
        if name == "rotate":
            angle = kwargs.get("angle_rad")
            if angle is None:
                angle = rng.uniform(-math.pi / 12, math.pi / 12)
            out = rotate(out, angle)
        elif name == "flip":
            out = flip_xy(out)
        elif name == "reverse":
            out = reverse(out)
        elif name == "jitter":
            out = jitter(out, rng, half_width=kwargs.get("half_width", 0.01))
        elif name == "speed":
            factor = kwargs.get("factor")
            if factor is None:
                factor = rng.uniform(0.8, 1.2)
            out = speed_scale(out, factor)
        elif name == "merge":
            if other is None:
                raise UnsupportedOperationError("merge needs a second scene")
            out = merge_scenes(out, other)
        else:
            raise UnsupportedOperationError(f"unknown augmentation {name!r}")
    return out


# --- serialization -----------------------------------------------------------


def scenes_to_json(scenes):
    """Serialize scenes to the documented scenes.json structure."""
    return [
        {
            "agent_ids": [int(i) for i in s.agent_ids],
            "observed": s.observed.tolist(),
            "future": s.future.tolist(),
            "stride_seconds": s.frame_stride_seconds,
        }
        for s in scenes
    ]


def scenes_from_json(obj):
    return [
        Scene(
            observed=np.array(entry["observed"], dtype=float),
            future=np.array(entry["future"], dtype=float),
            agent_ids=list(entry["agent_ids"]),
            frame_stride_seconds=float(entry["stride_seconds"]),
        )
        for entry in obj
    ]


def save_scenes(scenes, path):
    with open(path, "w") as fh:
        json.dump(scenes_to_json(scenes), fh)


def load_scenes(path):
    with open(path) as fh:
        return scenes_from_json(json.load(fh))
