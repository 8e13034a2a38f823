# utils/manip.py
"""Grasp selection from part poses and kinematic actuation trajectories."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from models.errors import InputError, PolicyError
from models.part import JointKind, PartClass

logger = logging.getLogger(__name__)

PHASES = ('approach', 'grasp', 'actuate')
HANDLE_CLASSES = (PartClass.LINE_FIXED_HANDLE, PartClass.ROUND_FIXED_HANDLE,
                  PartClass.HINGE_HANDLE, PartClass.HINGE_KNOB)
UNIT_TOL = 1e-6


# ============================================================================
# GRIPPER POSES AND TRAJECTORIES
# ============================================================================

@dataclass(frozen=True, eq=False)
class GripperPose:
    position: np.ndarray
    approach_dir: np.ndarray
    closing_dir: np.ndarray
    aperture: float

    def __post_init__(self):
        for name in ('position', 'approach_dir', 'closing_dir'):
            value = np.array(getattr(self, name), dtype=np.float64)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'aperture', float(self.aperture))

        errors = []
        for name in ('approach_dir', 'closing_dir'):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > UNIT_TOL:
                errors.append(f'{name} must be a unit vector')
        if abs(float(self.approach_dir @ self.closing_dir)) > UNIT_TOL:
            errors.append('approach and closing directions must be orthogonal')
        if not self.aperture >= 0:
            errors.append('aperture must be >= 0')
        if errors:
            raise PolicyError('; '.join(errors))

    def moved(self, position, rotation=None):
        """Same gripper at a new position, optionally with rotated directions"""
        if rotation is None:
            return GripperPose(position, self.approach_dir, self.closing_dir, self.aperture)
        return GripperPose(position, rotation.apply(self.approach_dir),
                           rotation.apply(self.closing_dir), self.aperture)

    def transformed(self, rotation, translation):
        rotation = np.asarray(rotation, dtype=np.float64)
        return GripperPose(rotation @ self.position + np.asarray(translation, dtype=np.float64),
                           rotation @ self.approach_dir, rotation @ self.closing_dir, self.aperture)

    def to_dict(self):
        return {
            'position': self.position.tolist(),
            'approach_dir': self.approach_dir.tolist(),
            'closing_dir': self.closing_dir.tolist(),
            'aperture': self.aperture
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    waypoints: tuple
    phases: tuple
    dt: float = 1 / 250

    def __post_init__(self):
        object.__setattr__(self, 'waypoints', tuple(self.waypoints))
        object.__setattr__(self, 'phases', tuple(self.phases))
        if not self.waypoints:
            raise PolicyError('trajectory needs at least one waypoint')
        if len(self.phases) != len(self.waypoints):
            raise PolicyError('one phase tag per waypoint')
        if any(phase not in PHASES for phase in self.phases):
            raise PolicyError(f'phase tags must be one of {PHASES}')
        if not self.dt > 0:
            raise PolicyError('dt must be positive')

    def __len__(self):
        return len(self.waypoints)

    @property
    def positions(self):
        return np.array([w.position for w in self.waypoints])

    def phase(self, name):
        return [w for w, p in zip(self.waypoints, self.phases) if p == name]

    def to_dict(self):
        return {
            'dt': self.dt,
            'num_waypoints': len(self.waypoints),
            'waypoints': [{'phase': p, **w.to_dict()} for w, p in zip(self.waypoints, self.phases)]
        }


# ============================================================================
# GRASP RULES
# ============================================================================

def _frame(pose):
    r = pose.rotation
    return r[:, 0], r[:, 1], r[:, 2]


def _top_face_grasp(pose, closing, aperture):
    """Approach down the canonical z axis onto the +z face"""
    _, _, ez = _frame(pose)
    return GripperPose(pose.translation + ez * pose.size[2] / 2.0, -ez, closing, aperture)


def _edge_clamp(pose, margin):
    """Clamp the +x edge across the part's thickness (canonical z)"""
    ex, _, ez = _frame(pose)
    return GripperPose(pose.translation + ex * pose.size[0] / 2.0, -ex, ez,
                       pose.size[2] + margin)


def grasp_pose(pose, part_class, handle=None, intent='open', margin=0.02):
    """Gripper pose for a part; ``handle`` is an optional PartRecord of its handle"""
    part_class = PartClass.parse(part_class)
    ex, ey, _ = _frame(pose)
    sx, sy, _ = pose.size

    if part_class in (PartClass.ROUND_FIXED_HANDLE, PartClass.HINGE_KNOB):
        return _top_face_grasp(pose, ex, max(sx, sy) + margin)
    if part_class in (PartClass.LINE_FIXED_HANDLE, PartClass.HINGE_HANDLE):
        # opening direction parallel to the handle's y axis
        return _top_face_grasp(pose, ey, sy + margin)
    if part_class is PartClass.SLIDER_BUTTON:
        # pressed with a closed gripper
        return _top_face_grasp(pose, ex, 0.0)

    if handle is not None:
        if handle.part_class not in HANDLE_CLASSES:
            raise PolicyError(f'{handle.part_class.camel_name} is not a handle',
                              part_id=handle.part_id)
        return grasp_pose(handle.pose, handle.part_class, margin=margin)

    if part_class is PartClass.SLIDER_DRAWER:
        if intent == 'fetch':
            return _top_face_grasp(pose, ex, sx + margin)
        if intent != 'open':
            raise PolicyError(f'unknown drawer intent {intent!r}')
        return _edge_clamp(pose, margin)
    # doors, hinge lids and slider lids without a handle
    return _edge_clamp(pose, margin)


# ============================================================================
# TRAJECTORIES
# ============================================================================

def step_count(duration, dt):
    """ceil(duration / dt), robust to float noise at exact multiples"""
    return max(1, math.ceil(round(duration / dt, 9)))


def default_motion_range(pose, joint):
    """Quarter turn for revolute joints, the canonical z extent for prismatic ones"""
    if joint.kind is JointKind.REVOLUTE:
        return math.pi / 2.0
    return float(pose.size[2])


def actuation_trajectory(grasp, joint, motion_range, dt=1 / 250, linear_speed=0.1,
                         angular_speed=30.0, standoff=0.1):
    """Approach from a standoff, grasp, then move along the joint constraint.

    Prismatic: straight line along the axis over motion_range meters.
    Revolute: arc about (pivot, axis), positive sense, over motion_range
    radians, with the gripper directions rotating along. angular_speed is
    in degrees per second.
    """
    if joint.kind is JointKind.FIXED:
        raise PolicyError('fixed parts cannot be actuated')
    if not motion_range > 0:
        raise InputError(f'motion range must be positive, got {motion_range}')

    waypoints, phases = [], []
    if standoff > 0:
        start = grasp.position - grasp.approach_dir * standoff
        n = step_count(standoff / linear_speed, dt)
        for k in range(n):
            waypoints.append(grasp.moved(start + (grasp.position - start) * k / n))
            phases.append('approach')
    waypoints.append(grasp)
    phases.append('grasp')

    axis = joint.axis_direction
    if joint.kind is JointKind.PRISMATIC:
        n = step_count(motion_range / linear_speed, dt)
        for k in range(1, n + 1):
            waypoints.append(grasp.moved(grasp.position + axis * motion_range * k / n))
            phases.append('actuate')
    else:
        n = step_count(motion_range / math.radians(angular_speed), dt)
        arm = grasp.position - joint.pivot
        for k in range(1, n + 1):
            turn = Rotation.from_rotvec(axis * motion_range * k / n)
            waypoints.append(grasp.moved(joint.pivot + turn.apply(arm), turn))
            phases.append('actuate')

    logger.debug(f"Trajectory: {len(waypoints)} waypoints, {phases.count('actuate')} actuating")
    return Trajectory(waypoints, phases, dt)


def replay_motion(trajectory, joint):
    """Joint motion achieved by the actuation phase, replayed kinematically"""
    grasped = trajectory.phase('grasp')
    moving = trajectory.phase('actuate')
    if not grasped or not moving:
        return 0.0
    start = grasped[0].position
    axis = joint.axis_direction

    if joint.kind is JointKind.PRISMATIC:
        return float((moving[-1].position - start) @ axis)
    if joint.kind is JointKind.FIXED:
        return 0.0

    def radial(point):
        arm = point - joint.pivot
        return arm - (arm @ axis) * axis

    swept = 0.0
    previous = radial(start)
    for waypoint in moving:
        current = radial(waypoint.position)
        swept += math.atan2(float(np.cross(previous, current) @ axis), float(previous @ current))
        previous = current
    return swept


def check_success(achieved_motion, motion_range, ratio=0.9):
    """True iff the part moved at least ratio * range (inclusive)"""
    if not motion_range > 0:
        raise InputError(f'motion range must be positive, got {motion_range}')
    return bool(achieved_motion >= ratio * motion_range)
