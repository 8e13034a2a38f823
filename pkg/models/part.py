# models/part.py
import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from models.errors import InputError
from utils.geometry import (
    is_rotation, matrix_to_quaternion, quaternion_to_matrix, rot_x, rot_y, rot_z, unit
)

# NPCS coordinates live in [-0.5, 0.5]^3: tight box centered at the origin,
# uniformly scaled so that its space diagonal has length 1.
NPCS_HALF_RANGE = 0.5
NPCS_EPS = 1e-6

# Number of discrete angles a continuous z-symmetry is split into
Z_SYMMETRY_STEPS = 12


class PartClass(enum.IntEnum):
    LINE_FIXED_HANDLE = 1
    ROUND_FIXED_HANDLE = 2
    HINGE_HANDLE = 3
    HINGE_LID = 4
    SLIDER_LID = 5
    SLIDER_BUTTON = 6
    SLIDER_DRAWER = 7
    HINGE_DOOR = 8
    HINGE_KNOB = 9

    @property
    def camel_name(self):
        return ''.join(word.capitalize() for word in self.name.split('_'))

    @property
    def symmetry_type(self):
        return _SYMMETRY_TYPES[self]

    @property
    def joint_kind(self):
        return _JOINT_KINDS[self]

    @classmethod
    def parse(cls, value):
        """Accept a label (1..9), a CamelCase name, a snake_case name or a to_dict() mapping"""
        if isinstance(value, cls):
            return value
        if isinstance(value, dict):
            value = value.get('name', value.get('label'))
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            try:
                return cls(int(value))
            except ValueError:
                raise InputError(f'unknown part class label {value!r}')
        if isinstance(value, str):
            key = value.strip()
            for member in cls:
                if key in (member.camel_name, member.name, member.name.lower()):
                    return member
        raise InputError(f'unknown part class {value!r}')

    def to_dict(self):
        return {'label': int(self), 'name': self.camel_name}


class SymmetryType(enum.Enum):
    TYPE1 = 1   # 180 degrees about z
    TYPE2 = 2   # 180 degrees about y
    TYPE3 = 3   # z rotations + flip
    TYPE4 = 4   # z rotations
    TYPE5 = 5   # none


class JointKind(str, enum.Enum):
    REVOLUTE = 'revolute'
    PRISMATIC = 'prismatic'
    FIXED = 'fixed'


_SYMMETRY_TYPES = {
    PartClass.LINE_FIXED_HANDLE: SymmetryType.TYPE1,
    PartClass.HINGE_HANDLE: SymmetryType.TYPE1,
    PartClass.HINGE_DOOR: SymmetryType.TYPE2,
    PartClass.HINGE_LID: SymmetryType.TYPE2,
    PartClass.SLIDER_BUTTON: SymmetryType.TYPE3,
    PartClass.SLIDER_LID: SymmetryType.TYPE3,
    PartClass.ROUND_FIXED_HANDLE: SymmetryType.TYPE3,
    PartClass.HINGE_KNOB: SymmetryType.TYPE4,
    PartClass.SLIDER_DRAWER: SymmetryType.TYPE5,
}

_JOINT_KINDS = {
    PartClass.HINGE_HANDLE: JointKind.REVOLUTE,
    PartClass.HINGE_LID: JointKind.REVOLUTE,
    PartClass.HINGE_DOOR: JointKind.REVOLUTE,
    PartClass.HINGE_KNOB: JointKind.REVOLUTE,
    PartClass.SLIDER_LID: JointKind.PRISMATIC,
    PartClass.SLIDER_BUTTON: JointKind.PRISMATIC,
    PartClass.SLIDER_DRAWER: JointKind.PRISMATIC,
    PartClass.LINE_FIXED_HANDLE: JointKind.FIXED,
    PartClass.ROUND_FIXED_HANDLE: JointKind.FIXED,
}


def _frozen(array, shape=None):
    array = np.array(array, dtype=np.float64)
    if shape is not None and array.shape != shape:
        raise InputError(f'expected shape {shape}, got {array.shape}')
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SymmetryGroup:
    """Discrete rotations of the canonical frame a part class tolerates"""

    variant: SymmetryType
    generators: tuple

    def __len__(self):
        return len(self.generators)

    def __iter__(self):
        return iter(self.generators)


@lru_cache(maxsize=None)
def _group_for(variant):
    steps = [rot_z(k * 360.0 / Z_SYMMETRY_STEPS) for k in range(Z_SYMMETRY_STEPS)]
    if variant is SymmetryType.TYPE1:
        mats = [np.eye(3), rot_z(180.0)]
    elif variant is SymmetryType.TYPE2:
        mats = [np.eye(3), rot_y(180.0)]
    elif variant is SymmetryType.TYPE3:
        flip = rot_x(180.0)
        mats = steps + [step @ flip for step in steps]
    elif variant is SymmetryType.TYPE4:
        mats = steps
    else:
        mats = [np.eye(3)]
    return SymmetryGroup(variant, tuple(_frozen(m, (3, 3)) for m in mats))


def symmetry_group(part_class):
    """Return the discrete symmetry generators of a part class"""
    return _group_for(PartClass.parse(part_class).symmetry_type)


# ============================================================================
# POSES AND TRANSFORMS
# ============================================================================

@dataclass(frozen=True, eq=False)
class PartPose:
    """Oriented tight bounding box: canonical axes -> camera frame"""

    rotation: np.ndarray
    translation: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'rotation', _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, 'translation', _frozen(self.translation, (3,)))
        object.__setattr__(self, 'size', _frozen(self.size, (3,)))

        errors = []
        if not is_rotation(self.rotation, tol=1e-6):
            errors.append('rotation is not in SO(3)')
        if not np.all(np.isfinite(self.translation)):
            errors.append('translation must be finite')
        if not np.all(self.size > 0):
            errors.append('size components must be positive')
        if errors:
            raise InputError('; '.join(errors))

    def corners(self):
        """8x3 box corners in the camera frame"""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                         dtype=np.float64)
        local = signs * (self.size / 2.0)
        return local @ self.rotation.T + self.translation

    def transformed(self, rotation, translation):
        """Apply the rigid motion x -> Q x + b to the box"""
        rotation = np.asarray(rotation, dtype=np.float64)
        return PartPose(rotation @ self.rotation,
                        rotation @ self.translation + np.asarray(translation, dtype=np.float64),
                        self.size)

    def to_dict(self):
        return {
            'rotation': self.rotation.reshape(-1).tolist(),
            'translation': self.translation.tolist(),
            'size': self.size.tolist(),
            'quaternion_xyzw': matrix_to_quaternion(self.rotation).tolist()
        }

    @classmethod
    def from_dict(cls, data):
        try:
            if 'rotation' in data:
                rotation = np.asarray(data['rotation'], dtype=np.float64).reshape(3, 3)
            else:
                rotation = quaternion_to_matrix(data['quaternion_xyzw'])
            return cls(rotation, data['translation'], data['size'])
        except (KeyError, ValueError, TypeError) as e:
            raise InputError(f'invalid pose: {e}')


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * R x + t"""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, 'rotation', _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, 'translation', _frozen(self.translation, (3,)))
        object.__setattr__(self, 'scale', float(self.scale))
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InputError(f'scale must be positive, got {self.scale}')
        if not is_rotation(self.rotation, tol=1e-6):
            raise InputError('rotation is not in SO(3)')

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.rotation.T) + self.translation

    def inverse(self):
        inv_rot = self.rotation.T
        return SimilarityTransform(inv_rot, -(inv_rot @ self.translation) / self.scale,
                                   1.0 / self.scale)

    def compose(self, other):
        """self after other"""
        return SimilarityTransform(self.rotation @ other.rotation,
                                   self.scale * (self.rotation @ other.translation) + self.translation,
                                   self.scale * other.scale)

    def as_matrix(self):
        matrix = np.eye(4)
        matrix[:3, :3] = self.scale * self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def to_dict(self):
        return {
            'rotation': self.rotation.reshape(-1).tolist(),
            'translation': self.translation.tolist(),
            'scale': self.scale
        }


@dataclass(frozen=True, eq=False)
class JointParams:
    kind: JointKind
    axis_direction: np.ndarray
    pivot: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, 'kind', JointKind(self.kind))
        axis = _frozen(self.axis_direction, (3,))
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise InputError('joint axis must be a unit vector')
        object.__setattr__(self, 'axis_direction', axis)
        if self.pivot is not None:
            object.__setattr__(self, 'pivot', _frozen(self.pivot, (3,)))
        elif self.kind is JointKind.REVOLUTE:
            raise InputError('revolute joints need a pivot')

    @classmethod
    def create(cls, kind, axis, pivot=None):
        """Build a joint, normalizing the axis first"""
        return cls(kind, unit(axis), pivot)

    def transformed(self, rotation, translation):
        rotation = np.asarray(rotation, dtype=np.float64)
        pivot = None
        if self.pivot is not None:
            pivot = rotation @ self.pivot + np.asarray(translation, dtype=np.float64)
        return JointParams.create(self.kind, rotation @ self.axis_direction, pivot)

    def to_dict(self):
        return {
            'kind': self.kind.value,
            'axis_direction': self.axis_direction.tolist(),
            'pivot': self.pivot.tolist() if self.pivot is not None else None
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.create(data['kind'], data['axis_direction'], data.get('pivot'))
        except (KeyError, ValueError, TypeError) as e:
            raise InputError(f'invalid joint: {e}')


@dataclass(frozen=True, eq=False)
class PartRecord:
    """One part of an object bundle: class, pose, optional joint, mask and score"""

    part_id: str
    part_class: PartClass
    pose: PartPose
    joint: JointParams = None
    point_indices: np.ndarray = None
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'part_id', str(self.part_id))
        object.__setattr__(self, 'part_class', PartClass.parse(self.part_class))
        object.__setattr__(self, 'score', float(self.score))
        if self.point_indices is not None:
            indices = np.unique(np.asarray(self.point_indices, dtype=np.int64))
            indices.setflags(write=False)
            object.__setattr__(self, 'point_indices', indices)

    def to_dict(self):
        data = {
            'id': self.part_id,
            'class': self.part_class.camel_name,
            'pose': self.pose.to_dict(),
            'score': self.score
        }
        if self.joint is not None:
            data['joint'] = self.joint.to_dict()
        if self.point_indices is not None:
            data['indices'] = self.point_indices.tolist()
        return data

    @classmethod
    def from_dict(cls, data, default_id=None):
        try:
            joint = JointParams.from_dict(data['joint']) if data.get('joint') else None
            return cls(data.get('id', default_id), data['class'], PartPose.from_dict(data['pose']),
                       joint, data.get('indices'), data.get('score', 1.0))
        except (KeyError, TypeError, AttributeError) as e:
            raise InputError(f'invalid part record: {e}', part_id=data.get('id', default_id)
                             if isinstance(data, dict) else default_id)

    @classmethod
    def from_bundle(cls, payload):
        """Parts of an object bundle {"parts": [...]}; ids default to list positions"""
        if not isinstance(payload, dict) or not isinstance(payload.get('parts', []), list):
            raise InputError('part bundle must be an object with a "parts" list')
        return [cls.from_dict(part, default_id=str(i)) for i, part in enumerate(payload.get('parts', []))]
