# utils/metrics.py
"""Instance-segmentation AP and part-pose error metrics."""

import logging

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from models.cloud import Proposal
from models.errors import MetricError
from models.part import JointKind, PartClass, PartPose, symmetry_group
from utils.geometry import axis_angle_deg, line_distance, rotation_angle_deg
from utils.grouping import mask_iou
from utils.posefit import joint_from_pose

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)

# pose accuracy thresholds as (degrees, centimeters)
ACCURACY_THRESHOLDS = {'A5': (5.0, 5.0), 'A10': (10.0, 10.0)}

MATCH_IOU = 0.5
HALFSPACE_DECIMALS = 12
# interior radius below which two boxes only touch
INTERIOR_EPS = 1e-9
SAMPLES_PER_AXIS = 47


# ============================================================================
# INSTANCE SEGMENTATION
# ============================================================================

def gt_instances_from_cloud(cloud):
    """Ground-truth instances of a labeled cloud as Proposals ordered by instance id"""
    return [Proposal(idx, label) for _, (label, idx) in sorted(cloud.instance_masks().items())
            if label != 0]


def match_instances(preds, gts, iou_thresh, iou=None):
    """Greedy matching by descending score (stable).

    A prediction becomes a true positive when its best still-unmatched GT of
    the same class reaches iou_thresh. Returns (order, tp flags, matched GT
    index or -1) for the predictions in score order.
    """
    order = np.argsort(-np.array([p.score for p in preds]), kind='stable') if preds else []
    if iou is None:
        iou = mask_iou(preds, gts) if preds and gts else np.zeros((len(preds), len(gts)))
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(preds), dtype=bool)
    matched = np.full(len(preds), -1)
    for rank, i in enumerate(order):
        best, best_iou = -1, iou_thresh
        for j, gt in enumerate(gts):
            if taken[j] or gt.semantic_label != preds[i].semantic_label:
                continue
            if iou[i, j] >= best_iou and (best < 0 or iou[i, j] > iou[i, best]):
                best, best_iou = j, iou[i, j]
        if best >= 0:
            taken[best] = True
            tp[rank] = True
            matched[rank] = best
    return np.asarray(order, dtype=np.int64), tp, matched


def average_precision(tp, num_gt):
    """101-point interpolated AP of a score-ordered TP sequence"""
    if num_gt == 0:
        return None
    if len(tp) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope: non-increasing from the right
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side='left')
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(np.mean(sampled))


def instance_ap(preds, gts, iou_thresh=0.5):
    """Per-class AP at one IoU threshold; classes without GT are left out of the mean"""
    preds = list(preds)
    gts = list(gts)
    iou = mask_iou(preds, gts) if preds and gts else np.zeros((len(preds), len(gts)))
    per_class = {}
    for label in sorted({g.semantic_label for g in gts}):
        cls_preds = [i for i, p in enumerate(preds) if p.semantic_label == label]
        cls_gts = [j for j, g in enumerate(gts) if g.semantic_label == label]
        _, tp, _ = match_instances([preds[i] for i in cls_preds], [gts[j] for j in cls_gts],
                                   iou_thresh, iou[np.ix_(cls_preds, cls_gts)])
        per_class[label] = average_precision(tp, len(cls_gts))
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return {'per_class': per_class, 'mean': mean}


def instance_map(preds, gts, thresholds=IOU_THRESHOLDS):
    """AP averaged over IoU thresholds 0.50:0.05:0.95"""
    per_threshold = {float(t): instance_ap(preds, gts, float(t)) for t in thresholds}
    labels = sorted({label for r in per_threshold.values() for label in r['per_class']})
    per_class = {label: float(np.mean([r['per_class'][label] for r in per_threshold.values()]))
                 for label in labels}
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return {
        'per_class': per_class,
        'per_threshold': {t: r['mean'] for t, r in per_threshold.items()},
        'mean': mean
    }


def segmentation_report(preds, gts):
    """Per-class AP50 and AP with the averages, keyed by class name"""
    ap50 = instance_ap(preds, gts, 0.5)
    ap = instance_map(preds, gts)
    name = lambda label: PartClass(label).camel_name
    return {
        'AP50': {name(label): value for label, value in ap50['per_class'].items()},
        'AP': {name(label): value for label, value in ap['per_class'].items()},
        'Avg.AP50': ap50['mean'],
        'Avg.AP': ap['mean'],
        'num_predictions': len(preds),
        'num_ground_truth': len(gts)
    }


# ============================================================================
# 3D BOX IOU
# ============================================================================

def box_halfspaces(pose):
    """Six halfspaces [n, -d] with n.x <= d for an oriented box"""
    rows = []
    for axis in range(3):
        normal = pose.rotation[:, axis]
        reach = float(normal @ pose.translation)
        half = pose.size[axis] / 2.0
        rows.append(np.append(normal, -(reach + half)))
        rows.append(np.append(-normal, reach - half))
    return np.array(rows)


def box_volume(pose):
    return float(np.prod(pose.size))


def _interior_point(halfspaces):
    """Chebyshev center of the intersection, or None when it has no interior"""
    a, b = halfspaces[:, :3], halfspaces[:, 3]
    norms = np.linalg.norm(a, axis=1)
    result = linprog(np.array([0.0, 0.0, 0.0, -1.0]), A_ub=np.column_stack([a, norms]), b_ub=-b,
                     bounds=[(None, None)] * 3 + [(0.0, None)], method='highs')
    if not result.success or result.x[3] <= INTERIOR_EPS:
        return None
    return result.x[:3]


def _sampled_iou(a, b, seed=0):
    """Stratified jittered samples over the union AABB"""
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*[np.arange(SAMPLES_PER_AXIS)] * 3, indexing='ij'), axis=-1)
    cells = grid.reshape(-1, 3) + rng.uniform(size=(SAMPLES_PER_AXIS ** 3, 3))
    samples = lo + cells / SAMPLES_PER_AXIS * (hi - lo)

    def inside(pose):
        local = (samples - pose.translation) @ pose.rotation
        return np.all(np.abs(local) <= pose.size / 2.0, axis=1)

    in_a, in_b = inside(a), inside(b)
    union = np.count_nonzero(in_a | in_b)
    return float(np.count_nonzero(in_a & in_b) / union) if union else 0.0


def box_iou_3d(a, b):
    """Volume IoU of two oriented boxes (exact convex intersection, sampled fallback)"""
    halfspaces = np.unique(np.round(np.vstack([box_halfspaces(a), box_halfspaces(b)]),
                                    HALFSPACE_DECIMALS), axis=0)
    try:
        interior = _interior_point(halfspaces)
        if interior is None:
            return 0.0
        vertices = HalfspaceIntersection(halfspaces, interior).intersections
        inter = ConvexHull(vertices).volume
    except (QhullError, ValueError) as e:
        logger.debug(f"Exact box intersection failed ({e}); sampling instead")
        return _sampled_iou(a, b)
    union = box_volume(a) + box_volume(b) - inter
    return float(np.clip(inter / union, 0.0, 1.0))


# ============================================================================
# POSE ERRORS
# ============================================================================

def _is_signed_permutation(matrix):
    return np.all(np.isin(matrix, (-1.0, 0.0, 1.0)))


def best_symmetry(pred_pose, gt_pose, part_class):
    """Group element g minimizing the angle of pred.R g gt.R^T, with that angle"""
    angles = [rotation_angle_deg(pred_pose.rotation @ g @ gt_pose.rotation.T)
              for g in symmetry_group(part_class)]
    k = int(np.argmin(angles))
    return list(symmetry_group(part_class))[k], angles[k]


def aligned_gt_box(gt_pose, g):
    """The GT box seen through symmetry g: rotation gt.R g^T, sizes permuted along with it"""
    g_inv = g.T
    size = np.abs(g_inv).T @ gt_pose.size if _is_signed_permutation(g_inv) else gt_pose.size
    return PartPose(gt_pose.rotation @ g_inv, gt_pose.translation, size)


def pose_errors(pred_pose, gt_pose, part_class, pred_joint=None, gt_joint=None):
    """Rotation (deg), translation/size (cm), axis angle (deg), axis offset (cm) and box IoU.

    The GT box is first seen through the symmetry that best matches the
    prediction; sizes and a GT joint derived from the pose follow that box,
    so every error is unchanged when the GT is replaced by a symmetric copy.
    """
    part_class = PartClass.parse(part_class)
    g, r_e = best_symmetry(pred_pose, gt_pose, part_class)
    gt_box = aligned_gt_box(gt_pose, g)
    pred_joint = pred_joint if pred_joint is not None else joint_from_pose(pred_pose, part_class)
    gt_joint = gt_joint if gt_joint is not None else joint_from_pose(gt_box, part_class)
    if pred_joint.kind != gt_joint.kind:
        raise MetricError(f'joint kinds differ: {pred_joint.kind.value} vs {gt_joint.kind.value}')

    d_e = None
    if gt_joint.kind is JointKind.REVOLUTE:
        d_e = 100.0 * line_distance(pred_joint.pivot, pred_joint.axis_direction,
                                    gt_joint.pivot, gt_joint.axis_direction)
    return {
        'R_e': r_e,
        'T_e': 100.0 * float(np.linalg.norm(pred_pose.translation - gt_box.translation)),
        'S_e': 100.0 * float(np.linalg.norm(pred_pose.size - gt_box.size)),
        'theta_e': axis_angle_deg(pred_joint.axis_direction, gt_joint.axis_direction),
        'd_e': d_e,
        'iou3d': box_iou_3d(pred_pose, gt_box),
    }


def pose_accuracy(errors, deg_thresh=5.0, cm_thresh=5.0):
    """Percentage of poses with R_e < deg_thresh and T_e < cm_thresh; None when empty"""
    errors = list(errors)
    if not errors:
        return None
    hits = sum(1 for e in errors if e['R_e'] < deg_thresh and e['T_e'] < cm_thresh)
    return 100.0 * hits / len(errors)


# ============================================================================
# DATASET EVALUATION
# ============================================================================

def match_parts(pred_parts, gt_parts):
    """Pair predictions with GT parts.

    With masks on both sides: greedy by score, same class, mask IoU >= 0.5.
    Otherwise parts pair up by id and class.
    """
    if all(p.point_indices is not None for p in list(pred_parts) + list(gt_parts)):
        preds = [Proposal(p.point_indices, p.part_class, p.score) for p in pred_parts]
        gts = [Proposal(g.point_indices, g.part_class) for g in gt_parts]
        order, tp, matched = match_instances(preds, gts, MATCH_IOU)
        return [(pred_parts[i], gt_parts[j]) for i, hit, j in zip(order, tp, matched) if hit]

    by_id = {p.part_id: p for p in pred_parts}
    return [(by_id[g.part_id], g) for g in gt_parts
            if g.part_id in by_id and by_id[g.part_id].part_class == g.part_class]


def evaluate_pose_object(pred_parts, gt_parts, object_id=None):
    """Errors of every detected GT part of one object; undetected parts are skipped"""
    parts = []
    for pred, gt in match_parts(pred_parts, gt_parts):
        errors = pose_errors(pred.pose, gt.pose, gt.part_class, pred.joint, gt.joint)
        parts.append({'object': object_id, 'part': gt.part_id, 'class': gt.part_class.camel_name,
                      **errors})
    parts.sort(key=lambda e: e['part'])
    return {'object': object_id, 'parts': parts, 'matched': len(parts), 'total_gt': len(gt_parts)}


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def summarize_pose_errors(objects):
    """Dataset-level means over every matched part of every object"""
    parts = [p for obj in objects for p in obj['parts']]
    summary = {
        'matched': sum(obj['matched'] for obj in objects),
        'total_gt': sum(obj['total_gt'] for obj in objects),
        'R_e': _mean(p['R_e'] for p in parts),
        'T_e': _mean(p['T_e'] for p in parts),
        'S_e': _mean(p['S_e'] for p in parts),
        'theta_e': _mean(p['theta_e'] for p in parts),
        'd_e': _mean(p['d_e'] for p in parts),
        'mIoU': _mean(p['iou3d'] for p in parts),
    }
    for name, (deg, cm) in ACCURACY_THRESHOLDS.items():
        summary[name] = pose_accuracy(parts, deg, cm)
    return {'summary': summary, 'parts': parts}


def evaluate_pose_dataset(pred_parts, gt_parts):
    return summarize_pose_errors([evaluate_pose_object(pred_parts, gt_parts)])
