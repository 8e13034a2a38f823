# utils/grouping.py
"""Dual-set grouping of per-point predictions into part proposals, plus NMS."""

import logging
from collections import deque

import numpy as np
from scipy import sparse

from models.cloud import BACKGROUND_LABEL, Proposal
from models.errors import InputError

logger = logging.getLogger(__name__)

# 27 cell offsets of the 3x3x3 neighborhood
_NEIGHBOR_CELLS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
                           dtype=np.int64)


# ============================================================================
# NEIGHBOR SEARCH
# ============================================================================

class VoxelHash:
    """Uniform grid with cell size = radius; every neighbor lies in the 27 surrounding cells"""

    def __init__(self, points, radius):
        if not radius > 0:
            raise InputError(f'radius must be positive, got {radius}')
        self.points = np.asarray(points, dtype=np.float64)
        self.radius = float(radius)
        self.cells = np.floor(self.points / self.radius).astype(np.int64)
        self._buckets = {}
        for i, cell in enumerate(map(tuple, self.cells)):
            self._buckets.setdefault(cell, []).append(i)
        self._buckets = {cell: np.array(idx, dtype=np.int64) for cell, idx in self._buckets.items()}

    def __len__(self):
        return len(self.points)

    def candidates(self, cell):
        chunks = [self._buckets.get(tuple(c)) for c in np.asarray(cell) + _NEIGHBOR_CELLS]
        chunks = [c for c in chunks if c is not None]
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(chunks)

    def neighbors(self):
        """Neighbor lists (sorted, self excluded) for every point, cell by cell"""
        result = [None] * len(self.points)
        r2 = self.radius * self.radius
        for cell, members in self._buckets.items():
            cand = self.candidates(cell)
            diff = self.points[members][:, None, :] - self.points[cand][None, :, :]
            close = np.einsum('ijk,ijk->ij', diff, diff) < r2
            for row, i in enumerate(members):
                hits = cand[close[row]]
                result[i] = np.sort(hits[hits != i])
        return result


def radius_neighbors(points, radius):
    """Indices j != i with |p_i - p_j| < radius, for every i"""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return []
    return VoxelHash(points, radius).neighbors()


def radius_neighbors_bruteforce(points, radius):
    points = np.asarray(points, dtype=np.float64)
    diff = points[:, None, :] - points[None, :, :]
    close = np.einsum('ijk,ijk->ij', diff, diff) < radius * radius
    np.fill_diagonal(close, False)
    return [np.flatnonzero(row) for row in close]


# ============================================================================
# DUAL-SET GROUPING
# ============================================================================

def _flood(neighbors, seed, visited):
    """Breadth-first flood from seed over a neighbor graph; marks visited"""
    cluster = [seed]
    visited[seed] = True
    queue = deque([seed])
    while queue:
        current = queue.popleft()
        for nxt in neighbors[current]:
            if not visited[nxt]:
                visited[nxt] = True
                cluster.append(nxt)
                queue.append(nxt)
    return cluster


def cluster_points(coords, labels, radius, min_points):
    """Flood-fill same-label foreground points; returns (label, global indices) pairs.

    Each semantic label is hashed separately so floods never cross labels.
    Clusters are ordered by label, then by smallest member index.
    """
    clusters = []
    for label in np.unique(labels):
        if label == BACKGROUND_LABEL:
            continue
        members = np.flatnonzero(labels == label)
        neighbors = radius_neighbors(coords[members], radius)
        visited = np.zeros(len(members), dtype=bool)
        for seed in range(len(members)):
            if visited[seed]:
                continue
            local = _flood(neighbors, seed, visited)
            if len(local) >= min_points:
                clusters.append((int(label), np.sort(members[local])))
    return clusters


def majority_label(labels):
    """Most frequent label; ties go to the smaller id"""
    values, counts = np.unique(labels, return_counts=True)
    return int(values[np.argmax(counts)])


def _proposal_score(indices, fg_prob):
    if fg_prob is None:
        return 1.0
    return float(np.mean(fg_prob[indices]))


def dual_set_group(cloud, pred, radius=0.03, min_points=5):
    """Cluster on raw coordinates and on offset-shifted coordinates, then merge.

    Proposals with identical point sets across the two sets are kept once.
    """
    if len(pred) != len(cloud):
        raise InputError(f'prediction has {len(pred)} points but cloud has {len(cloud)}')

    labels = pred.semantic_labels
    raw = cluster_points(cloud.positions, labels, radius, min_points)
    shifted = cluster_points(cloud.positions + pred.offsets, labels, radius, min_points)

    proposals = []
    seen = set()
    for _, indices in raw + shifted:
        key = indices.tobytes()
        if key in seen:
            continue
        seen.add(key)
        label = majority_label(labels[indices])
        proposals.append(Proposal(indices, label, _proposal_score(indices, pred.foreground_prob)))

    logger.debug(f"Grouping: {len(raw)} raw + {len(shifted)} shifted clusters -> "
                 f"{len(proposals)} proposals")
    return proposals


# ============================================================================
# FILTERING AND NMS
# ============================================================================

def membership_matrix(proposals, num_points=None):
    """Sparse proposals x points 0/1 matrix"""
    if num_points is None:
        num_points = max((int(p.point_indices[-1]) + 1 for p in proposals if len(p)), default=0)
    rows = np.concatenate([np.full(len(p), i) for i, p in enumerate(proposals)] or [np.zeros(0)])
    cols = np.concatenate([p.point_indices for p in proposals] or [np.zeros(0)])
    data = np.ones(len(rows), dtype=np.float64)
    return sparse.csr_matrix((data, (rows.astype(np.int64), cols.astype(np.int64))),
                             shape=(len(proposals), num_points))


def mask_iou(a, b=None, num_points=None):
    """Pairwise point-set IoU between two proposal lists"""
    b = a if b is None else b
    if num_points is None:
        num_points = max((int(p.point_indices[-1]) + 1 for p in list(a) + list(b) if len(p)),
                         default=0)
    ma = membership_matrix(a, num_points)
    mb = membership_matrix(b, num_points)
    inter = (ma @ mb.T).toarray()
    size_a = np.asarray(ma.sum(axis=1)).reshape(-1, 1)
    size_b = np.asarray(mb.sum(axis=1)).reshape(1, -1)
    union = size_a + size_b - inter
    with np.errstate(invalid='ignore', divide='ignore'):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def filter_and_nms(proposals, scores=None, fg_prob=None, fg_thresh=0.4, score_thresh=0.09,
                   nms_iou=0.3, min_points=5):
    """Drop background points and weak proposals, then greedy NMS by descending score"""
    proposals = list(proposals)
    if scores is None:
        scores = [p.score for p in proposals]
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(proposals):
        raise InputError(f'{len(scores)} scores for {len(proposals)} proposals')

    survivors = []
    for proposal, score in zip(proposals, scores):
        indices = proposal.point_indices
        if fg_prob is not None:
            indices = indices[np.asarray(fg_prob)[indices] >= fg_thresh]
        if len(indices) < min_points or score < score_thresh:
            continue
        survivors.append(Proposal(indices, proposal.semantic_label, score, proposal.domain_label))

    if not survivors:
        return []

    # stable sort: equal scores keep input order
    order = np.argsort(-np.array([p.score for p in survivors]), kind='stable')
    survivors = [survivors[i] for i in order]
    iou = mask_iou(survivors)

    keep = []
    for i in range(len(survivors)):
        if all(iou[i, j] <= nms_iou for j in keep):
            keep.append(i)

    logger.debug(f"NMS kept {len(keep)} of {len(proposals)} proposals")
    return [survivors[i] for i in keep]
