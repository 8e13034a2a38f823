# utils/io.py
"""File-format plumbing: ASCII PLY clouds, PNG depth/color, JSON and float32 blobs."""

import json
import logging
import os
import tempfile

import cv2
import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from models.cloud import DepthImage, PerPointPrediction, PinholeIntrinsics, PointCloud
from models.errors import InputError

logger = logging.getLogger(__name__)

# Column layout of the per-point prediction blob (little-endian float32, row-major)
PREDICTION_FIELDS = ('semantic', 'offset_x', 'offset_y', 'offset_z', 'fg_prob')
BLOB_DTYPE = '<f4'


# ============================================================================
# ATOMIC WRITES
# ============================================================================

def atomic_write_bytes(path, payload):
    """Write through a temp file in the target directory, then rename"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.partkit-', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def dumps_json(data):
    return json.dumps(data, sort_keys=True, indent=2) + '\n'


def write_json(path, data, schema_version=1):
    payload = {'schema_version': schema_version, **data}
    atomic_write_bytes(path, dumps_json(payload).encode('utf-8'))
    logger.info(f"Wrote {path}")


def read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f'malformed JSON: {e.msg}', path=str(path), line=e.lineno, column=e.colno)
    except OSError as e:
        raise InputError(f'cannot read {path}: {e}', path=str(path))


# ============================================================================
# PLY
# ============================================================================

def cloud_to_ply_bytes(cloud):
    dtype = [('x', 'f8'), ('y', 'f8'), ('z', 'f8')]
    columns = [cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2]]
    if cloud.colors is not None:
        dtype += [('red', 'u1'), ('green', 'u1'), ('blue', 'u1')]
        rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        columns += [rgb[:, 0], rgb[:, 1], rgb[:, 2]]
    if cloud.semantic_labels is not None:
        dtype.append(('semantic_label', 'i4'))
        columns.append(cloud.semantic_labels)
    if cloud.instance_labels is not None:
        dtype.append(('instance_label', 'i4'))
        columns.append(cloud.instance_labels)

    vertex = np.empty(len(cloud), dtype=dtype)
    for (name, _), column in zip(dtype, columns):
        vertex[name] = column

    el = PlyElement.describe(vertex, 'vertex')
    with tempfile.TemporaryFile() as buffer:
        PlyData([el], text=True).write(buffer)
        buffer.seek(0)
        return buffer.read()


def write_ply(path, cloud):
    atomic_write_bytes(path, cloud_to_ply_bytes(cloud))
    logger.info(f"Wrote {len(cloud)} points to {path}")


def read_ply(path):
    try:
        ply = PlyData.read(str(path))
        vertex = ply['vertex'].data
    except (OSError, KeyError, ValueError, PlyParseError) as e:
        # header errors carry a line, element errors the offending row
        raise InputError(f'cannot parse PLY: {e}', path=str(path),
                         line=getattr(e, 'line', None), row=getattr(e, 'row', None))

    names = vertex.dtype.names
    if not all(axis in names for axis in ('x', 'y', 'z')):
        raise InputError('PLY vertex element needs x, y, z', path=str(path))

    positions = np.stack([vertex['x'], vertex['y'], vertex['z']], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ('red', 'green', 'blue')):
        colors = np.stack([vertex['red'], vertex['green'], vertex['blue']], axis=1) / 255.0
    semantic = vertex['semantic_label'] if 'semantic_label' in names else None
    instance = vertex['instance_label'] if 'instance_label' in names else None
    return PointCloud(positions, colors, semantic, instance)


# ============================================================================
# IMAGES
# ============================================================================

def read_depth_png(path, depth_scale=1.0):
    """16-bit depth PNG -> DepthImage in meters (depth_scale=0.001 for millimeters)"""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputError(f'cannot read depth image {path}', path=str(path))
    if raw.ndim != 2:
        raise InputError('depth image must have a single channel', path=str(path))
    return DepthImage(raw.astype(np.float64) * depth_scale)


def read_color_png(path):
    """8-bit color PNG -> H x W x 3 RGB in [0, 1]"""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise InputError(f'cannot read color image {path}', path=str(path))
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0


def write_depth_png(path, depth, depth_scale=1.0):
    values = np.nan_to_num(np.asarray(depth, dtype=np.float64), nan=0.0) / depth_scale
    raw = np.clip(np.round(values), 0, np.iinfo(np.uint16).max).astype(np.uint16)
    ok, encoded = cv2.imencode('.png', raw)
    if not ok:
        raise InputError(f'cannot encode depth image {path}')
    atomic_write_bytes(path, encoded.tobytes())


def read_intrinsics(path):
    return PinholeIntrinsics.from_dict(read_json(path))


# ============================================================================
# PER-POINT PREDICTION BLOBS
# ============================================================================

def write_prediction_blob(sidecar_path, prediction):
    """Write the float32 blob next to its JSON sidecar"""
    blob_path = os.path.splitext(sidecar_path)[0] + '.bin'
    fg = prediction.foreground_prob
    if fg is None:
        fg = np.ones(len(prediction))
    table = np.column_stack([prediction.semantic_labels, prediction.offsets, fg]).astype(BLOB_DTYPE)
    atomic_write_bytes(blob_path, table.tobytes(order='C'))
    sidecar = {
        'file': os.path.basename(blob_path),
        'dtype': 'float32',
        'byte_order': 'little',
        'num_points': len(prediction),
        'fields': list(PREDICTION_FIELDS),
    }
    write_json(sidecar_path, sidecar)


def read_prediction_blob(sidecar_path):
    sidecar = read_json(sidecar_path)
    try:
        num_points = int(sidecar['num_points'])
        field_names = list(sidecar.get('fields', PREDICTION_FIELDS))
        blob_path = os.path.join(os.path.dirname(os.path.abspath(sidecar_path)), sidecar['file'])
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f'invalid prediction sidecar: {e}', path=str(sidecar_path))

    missing = [name for name in PREDICTION_FIELDS[:4] if name not in field_names]
    if missing:
        raise InputError(f'prediction sidecar lacks fields {missing}', path=str(sidecar_path))

    try:
        raw = np.fromfile(blob_path, dtype=BLOB_DTYPE)
    except OSError as e:
        raise InputError(f'cannot read prediction blob: {e}', path=blob_path)

    expected = num_points * len(field_names)
    if raw.size != expected:
        # report where the data stops matching the declared layout
        raise InputError(f'prediction blob holds {raw.size} values, expected {expected}',
                         path=blob_path, offset=min(raw.size, expected) * 4)

    table = raw.reshape(num_points, len(field_names)).astype(np.float64)
    column = {name: table[:, i] for i, name in enumerate(field_names)}
    semantic = column['semantic']
    if not np.all(np.isfinite(semantic)) or not np.all(semantic == np.round(semantic)):
        bad = int(np.flatnonzero(~np.isfinite(semantic) | (semantic != np.round(semantic)))[0])
        raise InputError('semantic column must hold integer labels', path=blob_path,
                         offset=bad * len(field_names) * 4)
    offsets = np.column_stack([column['offset_x'], column['offset_y'], column['offset_z']])
    return PerPointPrediction(semantic.astype(np.int64), offsets, column.get('fg_prob'))
