# utils/geometry.py
"""Small rotation/line helpers shared by pose fitting, metrics and planning."""

import numpy as np
from scipy.spatial.transform import Rotation

# Entries below this magnitude are snapped to zero when building the
# discrete symmetry rotations, so that 90/180 degree elements are exact.
SNAP_EPS = 1e-12


def _snap(matrix):
    matrix = np.where(np.abs(matrix) < SNAP_EPS, 0.0, matrix)
    return np.where(np.abs(np.abs(matrix) - 1.0) < SNAP_EPS, np.sign(matrix), matrix)


def rot_x(degrees):
    return _snap(Rotation.from_euler('x', degrees, degrees=True).as_matrix())


def rot_y(degrees):
    return _snap(Rotation.from_euler('y', degrees, degrees=True).as_matrix())


def rot_z(degrees):
    return _snap(Rotation.from_euler('z', degrees, degrees=True).as_matrix())


def apply_rotation(points, rotation):
    """Rotate row vectors: returns R @ p for every row p"""
    return np.asarray(points, dtype=np.float64) @ np.asarray(rotation, dtype=np.float64).T


def is_rotation(matrix, tol=1e-9):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
        return False
    return (np.allclose(matrix.T @ matrix, np.eye(3), atol=tol)
            and abs(np.linalg.det(matrix) - 1.0) <= tol)


def rotation_angle_deg(matrix):
    """Geodesic angle of a rotation matrix, accurate near zero"""
    return float(np.degrees(Rotation.from_matrix(matrix).magnitude()))


def random_rotation(rng):
    return Rotation.from_quat(rng.normal(size=4)).as_matrix()


def rotate_about_axis(vectors, axis, angle):
    """Rotate row vectors about a unit axis through the origin by angle (radians)"""
    axis = np.asarray(axis, dtype=np.float64)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).apply(vectors)


def matrix_to_quaternion(matrix):
    return Rotation.from_matrix(matrix).as_quat()


def quaternion_to_matrix(quat_xyzw):
    return Rotation.from_quat(quat_xyzw).as_matrix()


def unit(vector):
    vector = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError('cannot normalize a zero or non-finite vector')
    return vector / norm


def axis_angle_deg(a, b, directed=False):
    """Angle between two axes; undirected axes fold the result to <= 90 degrees"""
    a = unit(a)
    b = unit(b)
    dot = float(np.dot(a, b))
    if not directed:
        dot = abs(dot)
    cross = float(np.linalg.norm(np.cross(a, b)))
    return float(np.degrees(np.arctan2(cross, dot)))


def line_distance(p1, a1, p2, a2, parallel_eps=1e-9):
    """Shortest distance between the lines p1 + s*a1 and p2 + t*a2"""
    a1 = unit(a1)
    a2 = unit(a2)
    delta = np.asarray(p2, dtype=np.float64) - np.asarray(p1, dtype=np.float64)
    normal = np.cross(a1, a2)
    norm = np.linalg.norm(normal)
    if norm < parallel_eps:
        # parallel: perpendicular offset
        return float(np.linalg.norm(np.cross(delta, a1)))
    return float(abs(np.dot(delta, normal)) / norm)
