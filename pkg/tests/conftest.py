# tests/conftest.py
import os

os.environ['PARTKIT_ENV'] = 'testing'

import numpy as np
import pytest

from Config import config
from models.cloud import PerPointPrediction, PointCloud
from models.part import PartPose
from utils.geometry import random_rotation


@pytest.fixture
def app():
    from app import create_app
    return create_app('testing')


@pytest.fixture
def app_config():
    return config['testing']


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_pose(rng):
    def make(size=None):
        size = rng.uniform(0.05, 0.5, size=3) if size is None else size
        return PartPose(random_rotation(rng), rng.uniform(-1.0, 1.0, size=3), size)
    return make


def blob_cloud(centers, points_per_instance=6, spread=0.005, label=1, seed=0):
    """Tight instances around the given centers with exact offsets to them"""
    rng = np.random.default_rng(seed)
    labels = [label] * len(centers) if np.isscalar(label) else list(label)
    positions, semantic, instance, offsets = [], [], [], []
    for i, center in enumerate(centers):
        pts = np.asarray(center) + rng.uniform(-spread, spread, size=(points_per_instance, 3))
        positions.append(pts)
        offsets.append(np.asarray(center) - pts)
        semantic += [labels[i]] * points_per_instance
        instance += [i] * points_per_instance
    positions = np.vstack(positions)
    cloud = PointCloud(positions, semantic_labels=semantic, instance_labels=instance)
    pred = PerPointPrediction(np.array(semantic), np.vstack(offsets), np.ones(len(positions)))
    return cloud, pred


@pytest.fixture
def make_blob_cloud():
    return blob_cloud
