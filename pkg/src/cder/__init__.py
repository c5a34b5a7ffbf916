"""Cover-tree entropy reduction: Gaussian coordinates for labeled point clouds."""

from .classify import CvReport, Prediction, cross_validate, predict
from .covertree import CoverTree, CoverTreeConfig, RootPolicy, build_cover_tree
from .data import CloudCollection, DataError, PointCloud, assign_weights, pool, read_collection
from .entropy import Decision, decide, select_regions
from .gaussians import CderModel, GaussianCoordinate, ModelError, featurize, train

__all__ = [
    "CderModel", "CloudCollection", "CoverTree", "CoverTreeConfig", "CvReport", "DataError", "Decision",
    "GaussianCoordinate", "ModelError", "PointCloud", "Prediction", "RootPolicy", "assign_weights",
    "build_cover_tree", "cross_validate", "decide", "featurize", "pool", "predict",
    "read_collection", "select_regions", "train",
]
