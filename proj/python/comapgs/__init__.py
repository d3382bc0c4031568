"""Covisibility maps, point-cloud enhancement and proximity supervision."""

import json
import os

from ._core import (
    ComapError,
    ProximityModel,
    covis_maps,
    read_ply,
    refine_covis_map,
    scene_covis_score,
    set_verbose,
    weight_out,
)
from ._core import _run

__all__ = [
    "ComapError",
    "ProximityModel",
    "SOURCE_NAMES",
    "covis_maps",
    "read_ply",
    "refine_covis_map",
    "run",
    "scene_covis_score",
    "set_verbose",
    "weight_out",
]

# Values of the per-point `sources` array returned by read_ply.
SOURCE_NAMES = ("colmap", "triangulated", "mono")


def run(command, **config):
    """Run a pipeline stage ("synth", "comap", "enhance", "train-proximity",
    "eval-loss", "optimize-demo") and return its report as a dict.

    Keyword arguments are run-config keys, as in a --config JSON file.
    """
    config = {k: os.fspath(v) if isinstance(v, os.PathLike) else v for k, v in config.items()}
    return json.loads(_run(command, json.dumps(config)))
