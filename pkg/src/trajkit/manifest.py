"""Run manifests: config echo, input digests and seed for reproducibility.

Every CLI artifact embeds (or sits next to) its manifest; re-running the
command with the manifest's config and seed reproduces the artifact
bit-exactly. Wall-clock timings are volatile, so they go to a separate
sidecar file that is excluded from the reproducibility contract.
"""

from __future__ import annotations

import hashlib
import json

from . import __version__


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command, config, input_paths, seed):
    return {
        "command": command,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in input_paths},
        "seed": seed,
        "version": __version__,
    }


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_timing(path, seconds):
    """Volatile timing sidecar, outside the bit-exact reproducibility set."""
    with open(path, "w") as fh:
        json.dump({"wall_seconds": seconds}, fh)
        fh.write("\n")
