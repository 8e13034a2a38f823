# utils/posefit.py
"""NPCS pose fitting: Umeyama, RANSAC, box recovery, symmetry-aware loss, joints."""

import logging
from dataclasses import dataclass

import numpy as np

from models.errors import FitError, InputError
from models.part import (
    NPCS_EPS, NPCS_HALF_RANGE, Z_SYMMETRY_STEPS, JointKind, JointParams, PartClass, PartPose,
    SimilarityTransform, SymmetryType, symmetry_group
)
from utils.geometry import apply_rotation, rotation_angle_deg

logger = logging.getLogger(__name__)

MIN_SAMPLE = 3
# relative singular value below which the cross-covariance counts as rank deficient
RANK_EPS = 1e-12
MIN_EXTENT = 1e-6

UNIT_X = np.array([1.0, 0.0, 0.0])
UNIT_Y = np.array([0.0, 1.0, 0.0])
UNIT_Z = np.array([0.0, 0.0, 1.0])


def _as_points(array, name):
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != 3:
        raise InputError(f'{name} must be M x 3, got {array.shape}')
    if not np.all(np.isfinite(array)):
        raise InputError(f'{name} contains NaN or Inf')
    return array


# ============================================================================
# SIMILARITY ESTIMATION
# ============================================================================

def umeyama(src, dst):
    """Closed-form least-squares similarity with dst ~ s * R @ src + t and det(R) = +1"""
    src = _as_points(src, 'src')
    dst = _as_points(dst, 'dst')
    if src.shape != dst.shape:
        raise InputError(f'src {src.shape} and dst {dst.shape} differ')
    m = len(src)
    if m < MIN_SAMPLE:
        raise FitError(f'need at least {MIN_SAMPLE} correspondences, got {m}')

    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    src_demean = src - src_mean
    dst_demean = dst - dst_mean

    cov = dst_demean.T @ src_demean / m
    u, sigma, vt = np.linalg.svd(cov)
    if sigma[0] <= 0.0 or sigma[1] <= RANK_EPS * sigma[0]:
        raise FitError('degenerate correspondences (cross-covariance rank < 2)')

    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rotation = u @ np.diag(d) @ vt

    src_var = np.sum(src_demean ** 2) / m
    scale = float(np.dot(sigma, d) / src_var)
    if not scale > 0:
        raise FitError(f'non-positive scale {scale:.3g}')

    translation = dst_mean - scale * rotation @ src_mean
    return SimilarityTransform(rotation, translation, scale)


def residuals(transform, src, dst):
    return np.linalg.norm(transform.apply(src) - dst, axis=1)


def adaptive_threshold(transform, src, inlier_fraction=0.05):
    """Fraction of the fitted box diagonal: s * |extent(src)|"""
    extent = src.max(axis=0) - src.min(axis=0)
    return inlier_fraction * transform.scale * float(np.linalg.norm(extent))


def ransac_umeyama(src, dst, iters=100, inlier_thresh=None, seed=0, inlier_fraction=0.05):
    """RANSAC over minimal 3-point samples, refit on the best consensus set.

    Returns (transform, inlier mask). The mask is the best trial's consensus
    set. Each trial draws from its own stream spawned from ``seed``, so trials
    are independent of evaluation order.
    """
    src = _as_points(src, 'src')
    dst = _as_points(dst, 'dst')
    if src.shape != dst.shape:
        raise InputError(f'src {src.shape} and dst {dst.shape} differ')
    m = len(src)
    if m < MIN_SAMPLE:
        raise FitError(f'need at least {MIN_SAMPLE} correspondences, got {m}')

    best_mask = None
    best_count = 0
    for stream in np.random.SeedSequence(seed).spawn(iters):
        rng = np.random.default_rng(stream)
        sample = rng.choice(m, size=MIN_SAMPLE, replace=False)
        try:
            model = umeyama(src[sample], dst[sample])
        except FitError:
            continue
        thresh = inlier_thresh if inlier_thresh is not None else \
            adaptive_threshold(model, src, inlier_fraction)
        mask = residuals(model, src, dst) < thresh
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count = mask, count

    if best_count < MIN_SAMPLE:
        raise FitError(f'no model reached {MIN_SAMPLE} inliers in {iters} trials',
                       inliers=best_count)

    transform = umeyama(src[best_mask], dst[best_mask])
    logger.debug(f"RANSAC: {best_count}/{m} inliers, scale {transform.scale:.4f}")
    return transform, best_mask


# ============================================================================
# BOXES AND LOSSES
# ============================================================================

def pose_from_fit(transform, npcs):
    """Tight NPCS box mapped into the camera frame"""
    npcs = _as_points(npcs, 'npcs')
    lo = npcs.min(axis=0)
    hi = npcs.max(axis=0)
    center = (lo + hi) / 2.0
    extent = np.maximum(hi - lo, MIN_EXTENT)
    translation = transform.translation + transform.scale * transform.rotation @ center
    return PartPose(transform.rotation, translation, transform.scale * extent)


def soft_l1(error, delta=0.1):
    error = np.abs(np.asarray(error, dtype=np.float64))
    return np.where(error < delta, 0.5 * error ** 2 / delta, error - 0.5 * delta)


def symmetry_aware_npcs_loss(pred, gt, part_class, delta=0.1):
    """Minimum over the class's symmetry group of the mean per-coordinate soft-L1"""
    pred = _as_points(pred, 'pred')
    gt = _as_points(gt, 'gt')
    if pred.shape != gt.shape:
        raise InputError(f'pred {pred.shape} and gt {gt.shape} differ')
    if len(pred) == 0:
        return 0.0
    losses = [float(np.mean(soft_l1(pred - apply_rotation(gt, g), delta)))
              for g in symmetry_group(part_class)]
    return min(losses)


# ============================================================================
# JOINTS AND CANONICAL POSES
# ============================================================================

def joint_from_pose(pose, part_class):
    """Joint parameters implied by the canonical frame of the part class"""
    part_class = PartClass.parse(part_class)
    r = pose.rotation
    kind = part_class.joint_kind

    if kind is JointKind.PRISMATIC:
        return JointParams.create(kind, r @ UNIT_Z)
    if kind is JointKind.FIXED:
        # only the approach axis is meaningful
        return JointParams.create(kind, r @ UNIT_Z)

    if part_class in (PartClass.HINGE_DOOR, PartClass.HINGE_LID):
        # hinge on the -x face midline, axis along canonical y
        pivot = pose.translation + r @ np.array([-pose.size[0] / 2.0, 0.0, 0.0])
        return JointParams.create(kind, r @ UNIT_Y, pivot)
    # knobs and hinge handles turn about canonical z through the box center
    return JointParams.create(kind, r @ UNIT_Z, pose.translation)


def canonicalize_pose(pose, part_class):
    """Pick the z-rotation representative with the smallest rotation angle.

    Only the z-rotations of the group are considered, so the canonical z axis
    (and with it the joint axis) is preserved. Sizes swap x/y for odd
    multiples of 90 degrees.
    """
    part_class = PartClass.parse(part_class)
    if part_class.symmetry_type not in (SymmetryType.TYPE3, SymmetryType.TYPE4):
        return pose

    z_rotations = list(symmetry_group(part_class))[:Z_SYMMETRY_STEPS]
    angles = [rotation_angle_deg(pose.rotation @ g) for g in z_rotations]
    k = int(np.argmin(angles))
    if k == 0:
        return pose

    size = pose.size
    quarter = Z_SYMMETRY_STEPS // 4
    if k % quarter == 0 and (k // quarter) % 2 == 1:
        size = size[[1, 0, 2]]
    return PartPose(pose.rotation @ z_rotations[k], pose.translation, size)


@dataclass(frozen=True, eq=False)
class PartFit:
    part_class: PartClass
    pose: PartPose
    joint: JointParams
    transform: SimilarityTransform
    inliers: np.ndarray

    def to_dict(self):
        return {
            'class': self.part_class.to_dict(),
            'pose': self.pose.to_dict(),
            'joint': self.joint.to_dict(),
            'similarity': self.transform.to_dict(),
            'num_inliers': int(self.inliers.sum()),
            'num_points': int(len(self.inliers))
        }


def fit_part_pose(points, npcs, part_class, iters=100, inlier_thresh=None, seed=0,
                  inlier_fraction=0.05, part_id=None):
    """RANSAC + Umeyama + box recovery + canonicalization + joint derivation"""
    part_class = PartClass.parse(part_class)
    points = _as_points(points, 'points')
    npcs = _as_points(npcs, 'npcs')
    if points.shape != npcs.shape:
        raise InputError(f'points {points.shape} and npcs {npcs.shape} differ', part_id=part_id)

    outside = np.abs(npcs) > NPCS_HALF_RANGE + NPCS_EPS
    if outside.any():
        logger.warning(f"{int(outside.any(axis=1).sum())} NPCS points fall outside the unit box")

    try:
        transform, inliers = ransac_umeyama(npcs, points, iters=iters, inlier_thresh=inlier_thresh,
                                            seed=seed, inlier_fraction=inlier_fraction)
    except FitError as e:
        raise FitError(e.message, part_id=part_id, **e.context)

    pose = canonicalize_pose(pose_from_fit(transform, npcs[inliers]), part_class)
    joint = joint_from_pose(pose, part_class)
    return PartFit(part_class, pose, joint, transform, inliers)
