import os
from dotenv import load_dotenv

load_dotenv()

__version__ = '0.1.0'


class Config:
    # Grouping (inference thresholds)
    CLUSTER_RADIUS = float(os.getenv('PARTKIT_CLUSTER_RADIUS', 0.03))
    MIN_POINTS = int(os.getenv('PARTKIT_MIN_POINTS', 5))
    FG_THRESH = float(os.getenv('PARTKIT_FG_THRESH', 0.4))
    SCORE_THRESH = float(os.getenv('PARTKIT_SCORE_THRESH', 0.09))
    NMS_IOU = float(os.getenv('PARTKIT_NMS_IOU', 0.3))

    # Domain-adversarial losses
    S_THRE = float(os.getenv('PARTKIT_S_THRE', 0.09))
    GRL_LAMBDA = float(os.getenv('PARTKIT_GRL_LAMBDA', 0.3))
    GAMMA = float(os.getenv('PARTKIT_GAMMA', 2.0))
    LAYER_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
    CLASSIFICATION_WEIGHT = float(os.getenv('PARTKIT_CLASSIFICATION_WEIGHT', 0.05))
    ADV_WEIGHT = float(os.getenv('PARTKIT_ADV_WEIGHT', 5.0))
    ACC_DECAY = 0.9

    # Pose fitting
    RANSAC_ITERS = int(os.getenv('PARTKIT_RANSAC_ITERS', 100))
    RANSAC_INLIER_FRACTION = 0.05   # of the fitted bbox diagonal
    SOFT_L1_DELTA = 0.1

    # Ingestion
    FPS_POINTS = int(os.getenv('PARTKIT_FPS_POINTS', 20000))
    DEPTH_SCALE = float(os.getenv('PARTKIT_DEPTH_SCALE', 1.0))

    # Planning
    CONTROL_DT = 1 / 250
    LINEAR_SPEED = 0.1       # m/s
    ANGULAR_SPEED = 30.0     # deg/s
    APPROACH_STANDOFF = 0.1  # m
    APERTURE_MARGIN = 0.02   # m
    SUCCESS_RATIO = 0.9

    SEED = int(os.getenv('PARTKIT_SEED', 0))

    # Task dispatch: Celery only when a broker is configured
    CELERY_BROKER_URL = os.getenv('PARTKIT_BROKER_URL')
    CELERY_RESULT_BACKEND = os.getenv('PARTKIT_RESULT_BACKEND', CELERY_BROKER_URL)
    CELERY_ENABLED = bool(CELERY_BROKER_URL)
    CELERY_TASK_ALWAYS_EAGER = False

    # Logging configuration
    LOG_LEVEL = os.getenv('PARTKIT_LOG_LEVEL', 'INFO')
    LOG_TO_STDOUT = False

    SCHEMA_VERSION = 1


class DevelopmentConfig(Config):
    DEBUG = True


class ProductionConfig(Config):
    DEBUG = False

    # Production logging
    LOG_LEVEL = os.getenv('PARTKIT_LOG_LEVEL', 'WARNING')


class TestingConfig(Config):
    TESTING = True
    LOG_LEVEL = 'WARNING'
    FPS_POINTS = 2048

    # Tasks run in-process through the real Celery code path
    CELERY_ENABLED = True
    CELERY_BROKER_URL = 'memory://'
    CELERY_RESULT_BACKEND = 'cache+memory://'
    CELERY_TASK_ALWAYS_EAGER = True


# Helper function to check environment
def current_config_name():
    return os.getenv('PARTKIT_ENV', 'default')


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
