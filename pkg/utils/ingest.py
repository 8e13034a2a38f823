# utils/ingest.py
"""RGB-D back-projection and farthest point sampling."""

import logging

import numpy as np

from models.cloud import PointCloud
from models.errors import InputError

logger = logging.getLogger(__name__)


def back_project(depth, intr, color=None):
    """Lift every valid depth pixel (u=column, v=row) to a camera-frame point"""
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise InputError(f'depth is {depth.width}x{depth.height} but intrinsics expect '
                         f'{intr.width}x{intr.height}')

    v, u = np.nonzero(depth.valid_mask)
    z = depth.values[v, u]
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    positions = np.column_stack([x, y, z]) if len(z) else np.zeros((0, 3))

    colors = None
    if color is not None:
        color = np.asarray(color)
        if color.shape[:2] != (intr.height, intr.width) or color.ndim != 3 or color.shape[2] != 3:
            raise InputError(f'color image shape {color.shape} does not match '
                             f'{intr.height}x{intr.width}x3')
        colors = color[v, u].astype(np.float64)
        if np.issubdtype(color.dtype, np.integer):
            colors = colors / 255.0

    logger.debug(f"Back-projected {len(z)} of {depth.values.size} pixels")
    return PointCloud(positions, colors)


def project(points, intr):
    """Pinhole projection: camera-frame points -> (u, v, z)"""
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    u = points[:, 0] * intr.fx / z + intr.cx
    v = points[:, 1] * intr.fy / z + intr.cy
    return np.column_stack([u, v, z])


def farthest_point_sample(cloud, k, seed=None):
    """Greedy FPS. Returns (subsampled cloud, index map into the input cloud).

    The first point is index 0, or a point drawn from ``seed`` when one is
    given. Ties are broken by the smallest index. Indices never repeat: once
    only duplicates of chosen points remain, the smallest unvisited index is
    taken.
    """
    n = len(cloud)
    if n == 0:
        raise InputError('cannot sample from an empty cloud')
    if k < 1:
        raise InputError(f'sample count must be >= 1, got {k}')
    if n <= k:
        indices = np.arange(n)
        return cloud.subset(indices), indices

    start = 0 if seed is None else int(np.random.default_rng(seed).integers(n))
    positions = cloud.positions
    indices = np.empty(k, dtype=np.int64)
    indices[0] = start
    min_dist = np.sum((positions - positions[start]) ** 2, axis=1)
    min_dist[start] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(min_dist))
        indices[i] = nxt
        np.minimum(min_dist, np.sum((positions - positions[nxt]) ** 2, axis=1), out=min_dist)
        min_dist[nxt] = -1.0

    return cloud.subset(indices), indices
