# utils/tasks.py
"""Per-object work dispatch: Celery when a broker is configured, in-process otherwise."""

import logging

from celery import Celery

from Config import config, current_config_name
from models.errors import ConfigError, FitError, InputError, MetricError, PartKitError, PolicyError
from models.part import PartRecord
from utils.metrics import evaluate_pose_object

logger = logging.getLogger(__name__)

ERROR_KINDS = {cls.kind: cls for cls in (InputError, ConfigError, FitError, MetricError, PolicyError)}

# Seconds to wait for one queued object before giving up
RESULT_TIMEOUT = 600


# ============================================================================
# CELERY SETUP
# ============================================================================

def make_celery(app_config):
    """Create the Celery instance for a Config class"""
    celery = Celery(
        'partkit',
        broker=app_config.CELERY_BROKER_URL or 'memory://',
        backend=app_config.CELERY_RESULT_BACKEND or 'cache+memory://'
    )
    celery.conf.update(
        task_always_eager=app_config.CELERY_TASK_ALWAYS_EAGER,
        task_eager_propagates=True,
        task_serializer='json',
        result_serializer='json',
        accept_content=['json']
    )
    return celery


celery = make_celery(config[current_config_name()])


def configure_celery(app_config):
    """Point the module-level Celery app at the active configuration"""
    celery.conf.update(
        broker_url=app_config.CELERY_BROKER_URL or 'memory://',
        result_backend=app_config.CELERY_RESULT_BACKEND or 'cache+memory://',
        task_always_eager=app_config.CELERY_TASK_ALWAYS_EAGER
    )
    return celery


# ============================================================================
# TASK DEFINITIONS
# ============================================================================

@celery.task(name='partkit.evaluate_pose_object')
def evaluate_pose_object_task(object_id, pred_payload, gt_payload):
    """Pose errors of one object; failures come back as an error payload"""
    try:
        result = evaluate_pose_object(PartRecord.from_bundle(pred_payload),
                                      PartRecord.from_bundle(gt_payload), object_id)
        return {'success': True, 'result': result}
    except PartKitError as e:
        logger.error(f"Evaluation of {object_id} failed: {e.message}")
        return {**e.to_dict(), 'object': object_id}


# ============================================================================
# TASK EXECUTION HELPERS
# ============================================================================

def _unwrap(outcome):
    if outcome.get('success'):
        return outcome['result']
    error_cls = ERROR_KINDS.get(outcome.get('kind'), PartKitError)
    context = {k: v for k, v in outcome.items() if k not in ('success', 'kind', 'error')}
    raise error_cls(outcome.get('error', 'task failed'), **context)


def map_objects(task, jobs, app_config=None):
    """Run task(object_id, *args) for every (object_id, args) job.

    Results are returned sorted by object id, so queued and sequential runs
    produce the same output.
    """
    app_config = app_config or config[current_config_name()]
    jobs = sorted(jobs, key=lambda job: job[0])

    if app_config.CELERY_ENABLED:
        mode = 'eager' if app_config.CELERY_TASK_ALWAYS_EAGER else 'queued'
        logger.info(f"Dispatching {len(jobs)} objects to Celery ({mode})")
        pending = [(object_id, task.apply_async(args=(object_id, *args)))
                   for object_id, args in jobs]
        outcomes = [(object_id, result.get(timeout=RESULT_TIMEOUT)) for object_id, result in pending]
    else:
        logger.info(f"Running {len(jobs)} objects in-process")
        outcomes = [(object_id, task(object_id, *args)) for object_id, args in jobs]

    return [_unwrap(outcome) for _, outcome in sorted(outcomes, key=lambda item: item[0])]
