# models/__init__.py
from .errors import PartKitError, InputError, ConfigError, FitError, MetricError, PolicyError
from .part import (
    PartClass, SymmetryType, JointKind, SymmetryGroup, PartPose, SimilarityTransform,
    JointParams, PartRecord, symmetry_group
)
from .cloud import PointCloud, Proposal, PerPointPrediction, PinholeIntrinsics, DepthImage
from .run_config import RunConfig

__all__ = [
    'PartKitError', 'InputError', 'ConfigError', 'FitError', 'MetricError', 'PolicyError',
    'PartClass', 'SymmetryType', 'JointKind', 'SymmetryGroup', 'PartPose',
    'SimilarityTransform', 'JointParams', 'PartRecord', 'symmetry_group',
    'PointCloud', 'Proposal', 'PerPointPrediction', 'PinholeIntrinsics', 'DepthImage',
    'RunConfig'
]
