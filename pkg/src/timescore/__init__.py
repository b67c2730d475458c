"""Density ratio estimation by learning and integrating time scores
along conditional Gaussian probability paths."""

from . import bench, checks, losses, mi, nn, oracle, paths, ratio, weighting

__all__ = [
    "bench",
    "checks",
    "losses",
    "mi",
    "nn",
    "oracle",
    "paths",
    "ratio",
    "weighting",
]
