# models/cloud.py
from dataclasses import dataclass, field

import numpy as np

from models.errors import InputError

BACKGROUND_LABEL = 0
BACKGROUND_INSTANCE = -1
NUM_PART_CLASSES = 9


def _readonly(array, dtype):
    if array is None:
        return None
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray = None
    semantic_labels: np.ndarray = None
    instance_labels: np.ndarray = None

    def __post_init__(self):
        positions = _readonly(self.positions, np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            if positions.size == 0:
                positions = _readonly(np.zeros((0, 3)), np.float64)
            else:
                raise InputError(f'positions must be N x 3, got {positions.shape}')
        if not np.all(np.isfinite(positions)):
            raise InputError('positions contain NaN or Inf')
        object.__setattr__(self, 'positions', positions)

        n = len(positions)
        errors = []
        colors = _readonly(self.colors, np.float64)
        if colors is not None and colors.shape != (n, 3):
            errors.append(f'colors must be {n} x 3')
        semantic = _readonly(self.semantic_labels, np.int64)
        if semantic is not None and semantic.shape != (n,):
            errors.append(f'semantic_labels must have length {n}')
        instance = _readonly(self.instance_labels, np.int64)
        if instance is not None and instance.shape != (n,):
            errors.append(f'instance_labels must have length {n}')
        if errors:
            raise InputError('; '.join(errors))

        object.__setattr__(self, 'colors', colors)
        object.__setattr__(self, 'semantic_labels', semantic)
        object.__setattr__(self, 'instance_labels', instance)

    def __len__(self):
        return len(self.positions)

    def subset(self, indices):
        """Select points (and every label channel) through an index map"""
        indices = np.asarray(indices, dtype=np.int64)
        take = lambda channel: None if channel is None else channel[indices]
        return PointCloud(self.positions[indices], take(self.colors),
                          take(self.semantic_labels), take(self.instance_labels))

    def instance_masks(self):
        """Ground-truth instances as {instance id: (semantic label, point indices)}"""
        if self.instance_labels is None or self.semantic_labels is None:
            raise InputError('cloud carries no instance/semantic labels')
        instances = {}
        for inst in np.unique(self.instance_labels):
            if inst == BACKGROUND_INSTANCE:
                continue
            idx = np.flatnonzero(self.instance_labels == inst)
            labels = np.bincount(self.semantic_labels[idx], minlength=NUM_PART_CLASSES + 1)
            instances[int(inst)] = (int(np.argmax(labels)), idx)
        return instances


@dataclass(frozen=True, eq=False)
class Proposal:
    """A candidate part instance over a point cloud"""

    point_indices: np.ndarray
    semantic_label: int
    score: float = 1.0
    domain_label: int = None

    def __post_init__(self):
        idx = np.unique(np.asarray(self.point_indices, dtype=np.int64))
        if len(idx) != len(np.asarray(self.point_indices).reshape(-1)):
            raise InputError('proposal point indices must be unique')
        idx.setflags(write=False)
        object.__setattr__(self, 'point_indices', idx)
        object.__setattr__(self, 'semantic_label', int(self.semantic_label))
        object.__setattr__(self, 'score', float(self.score))

        errors = []
        if not 1 <= self.semantic_label <= NUM_PART_CLASSES:
            errors.append(f'semantic label {self.semantic_label} outside 1..{NUM_PART_CLASSES}')
        if not np.isfinite(self.score):
            errors.append('score must be finite')
        if len(idx) and idx[0] < 0:
            errors.append('negative point index')
        if errors:
            raise InputError('; '.join(errors))

    def __len__(self):
        return len(self.point_indices)

    def validate_for(self, num_points):
        if len(self.point_indices) and self.point_indices[-1] >= num_points:
            raise InputError(f'proposal index {int(self.point_indices[-1])} out of range '
                             f'for {num_points} points')
        return self

    def with_points(self, indices):
        return Proposal(indices, self.semantic_label, self.score, self.domain_label)

    def to_dict(self):
        data = {
            'indices': self.point_indices.tolist(),
            'label': self.semantic_label,
            'score': self.score
        }
        if self.domain_label is not None:
            data['domain'] = int(self.domain_label)
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data['indices'], data['label'], data.get('score', 1.0), data.get('domain'))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f'invalid proposal: {e}')


@dataclass(frozen=True, eq=False)
class PerPointPrediction:
    """Network outputs the grouping stage consumes"""

    semantic_labels: np.ndarray
    offsets: np.ndarray
    foreground_prob: np.ndarray = None

    def __post_init__(self):
        labels = np.asarray(self.semantic_labels)
        if labels.ndim == 2:
            # logits -> hard labels
            labels = np.argmax(labels, axis=1)
        labels = _readonly(labels, np.int64)
        offsets = _readonly(self.offsets, np.float64)
        n = len(labels)
        errors = []
        if offsets.shape != (n, 3):
            errors.append(f'offsets must be {n} x 3, got {offsets.shape}')
        elif not np.all(np.isfinite(offsets)):
            errors.append('offsets must be finite')
        fg = _readonly(self.foreground_prob, np.float64)
        if fg is not None and fg.shape != (n,):
            errors.append(f'foreground_prob must have length {n}')
        if n and (labels.min() < 0 or labels.max() > NUM_PART_CLASSES):
            errors.append('semantic labels must be in 0..9')
        if errors:
            raise InputError('; '.join(errors))
        object.__setattr__(self, 'semantic_labels', labels)
        object.__setattr__(self, 'offsets', offsets)
        object.__setattr__(self, 'foreground_prob', fg)

    def __len__(self):
        return len(self.semantic_labels)


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        errors = []
        if not (self.fx > 0 and self.fy > 0):
            errors.append('focal lengths must be positive')
        if not (0 <= self.cx < self.width):
            errors.append('cx must lie in [0, width)')
        if not (0 <= self.cy < self.height):
            errors.append('cy must lie in [0, height)')
        if errors:
            raise InputError('; '.join(errors))

    def to_dict(self):
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'width': self.width, 'height': self.height}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(float(data['fx']), float(data['fy']), float(data['cx']), float(data['cy']),
                       int(data['width']), int(data['height']))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f'invalid intrinsics: {e}')


@dataclass(frozen=True, eq=False)
class DepthImage:
    """height x width depths in meters; 0 or NaN marks an invalid pixel"""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = _readonly(self.values, np.float64)
        if values.ndim != 2:
            raise InputError(f'depth image must be 2-D, got shape {values.shape}')
        finite = values[np.isfinite(values)]
        if finite.size and finite.min() < 0:
            raise InputError('depth values must be >= 0')
        object.__setattr__(self, 'values', values)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def valid_mask(self):
        return np.isfinite(self.values) & (self.values > 0)
