"""Breakup-aware tracking of ligaments and droplets in image sequences.

Pipeline stages: synthetic data generation and a ground-truth breakup
simulator (`synthgen`), classical frame-wise detection (`detect`), pairwise
geometric featurization with spatial gating (`relate`), small neural relation
classifiers (`nn`), lineage graph reconstruction with breakup statistics
(`lineage`), and evaluation metrics (`metrics`). `cli` ties them together.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    BBox,
    DetectedObject,
    Frame,
    InvariantError,
    Mask,
    ObjectClass,
    RelationLabel,
    ValidationError,
    bbox_iou,
    centroid,
    equivalent_diameter,
)
