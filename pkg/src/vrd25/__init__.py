"""Toolkit for object-centric relative-depth and occlusion relationships.

Submodules: model (core types), synthetic (world generator), dataio (file
formats and filtering), depthmaps (depth-map files and box statistics),
aggregate (vote aggregation), rules and mlp (predictors), features
(feature vectors), evaluate (metrics and analyses), service (annotation
HTTP API), cli (command-line entry point).
"""

from .model import (
    Box,
    Depth,
    ImageRecord,
    ObjectInstance,
    Occlusion,
    PairLabel,
    Setting,
    Split,
    ValidationError,
    VoteRecord,
    flip_depth,
    flip_occlusion,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Depth",
    "ImageRecord",
    "ObjectInstance",
    "Occlusion",
    "PairLabel",
    "Setting",
    "Split",
    "ValidationError",
    "VoteRecord",
    "flip_depth",
    "flip_occlusion",
    "__version__",
]
