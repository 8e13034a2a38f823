# routes/evaluate.py
import glob
import logging
import os

import click

from models.cloud import Proposal
from models.errors import ConfigError, InputError
from models.part import PartRecord
from routes import common_options, execute
from utils.io import read_json, read_ply, write_json
from utils.metrics import (evaluate_pose_dataset, gt_instances_from_cloud, segmentation_report,
                           summarize_pose_errors)
from utils.tasks import evaluate_pose_object_task, map_objects

logger = logging.getLogger(__name__)


# ============================================================================
# SEGMENTATION
# ============================================================================

def read_proposals(path, num_points):
    payload = read_json(path)
    if not isinstance(payload, dict) or not isinstance(payload.get('proposals'), list):
        raise InputError('proposal file needs a "proposals" list', path=str(path))
    return [Proposal.from_dict(p).validate_for(num_points) for p in payload['proposals']]


def run_eval_seg(app, run_config):
    pred_path, gt_path = run_config.require('pred', 'gt')
    gt_cloud = read_ply(gt_path)
    preds = read_proposals(pred_path, len(gt_cloud))
    gts = gt_instances_from_cloud(gt_cloud)

    report = segmentation_report(preds, gts)
    logger.info(f"Segmentation: {len(preds)} predictions, {len(gts)} GT instances, "
                f"AP50 {report['Avg.AP50']}")
    write_json(run_config.output, report, schema_version=app.config.SCHEMA_VERSION)
    return report


# ============================================================================
# POSE
# ============================================================================

def object_jobs(pred_dir, gt_dir):
    """One (object id, (pred bundle, gt bundle)) job per GT file; missing predictions are empty"""
    for path in (pred_dir, gt_dir):
        if not os.path.isdir(path):
            raise InputError(f'{path} is not a directory', path=str(path))
    jobs = []
    for gt_path in sorted(glob.glob(os.path.join(gt_dir, '*.json'))):
        name = os.path.basename(gt_path)
        pred_path = os.path.join(pred_dir, name)
        pred = read_json(pred_path) if os.path.exists(pred_path) else {'parts': []}
        jobs.append((os.path.splitext(name)[0], (pred, read_json(gt_path))))
    if not jobs:
        raise InputError(f'no ground-truth objects in {gt_dir}', path=str(gt_dir))
    return jobs


def run_eval_pose(app, run_config):
    inputs = run_config.inputs
    if inputs.get('pred_dir') or inputs.get('gt_dir'):
        pred_dir, gt_dir = run_config.require('pred_dir', 'gt_dir')
        jobs = object_jobs(pred_dir, gt_dir)
        report = summarize_pose_errors(map_objects(evaluate_pose_object_task, jobs, app.config))
        report['num_objects'] = len(jobs)
    elif inputs.get('pred') or inputs.get('gt'):
        pred_path, gt_path = run_config.require('pred', 'gt')
        report = evaluate_pose_dataset(PartRecord.from_bundle(read_json(pred_path)),
                                       PartRecord.from_bundle(read_json(gt_path)))
        report['num_objects'] = 1
    else:
        raise ConfigError('eval-pose: give pred and gt bundles or pred_dir and gt_dir')

    summary = report['summary']
    logger.info(f"Pose: matched {summary['matched']}/{summary['total_gt']} parts")
    write_json(run_config.output, report, schema_version=app.config.SCHEMA_VERSION)
    return summary


HANDLERS = {
    'eval-seg': run_eval_seg,
    'eval-pose': run_eval_pose
}


@click.command('eval-seg')
@click.option('--pred', type=click.Path(dir_okay=False), default=None,
              help='Proposals JSON written by segment.')
@click.option('--gt', type=click.Path(dir_okay=False), default=None,
              help='PLY with semantic_label and instance_label columns.')
@common_options
@click.pass_obj
def eval_seg_command(app, pred, gt, output, config_path):
    """Instance segmentation AP50 and AP per part class."""
    execute(app, 'eval-seg', config_path, inputs={'pred': pred, 'gt': gt}, output=output)


@click.command('eval-pose')
@click.option('--pred', type=click.Path(dir_okay=False), default=None,
              help='Predicted part bundle (one object).')
@click.option('--gt', type=click.Path(dir_okay=False), default=None,
              help='Ground-truth part bundle (one object).')
@click.option('--pred-dir', type=click.Path(file_okay=False), default=None,
              help='Directory of predicted bundles, one <object>.json each.')
@click.option('--gt-dir', type=click.Path(file_okay=False), default=None,
              help='Directory of ground-truth bundles, one <object>.json each.')
@common_options
@click.pass_obj
def eval_pose_command(app, pred, gt, pred_dir, gt_dir, output, config_path):
    """Pose, joint and box errors with 5°5cm / 10°10cm accuracies."""
    execute(app, 'eval-pose', config_path,
            inputs={'pred': pred, 'gt': gt, 'pred_dir': pred_dir, 'gt_dir': gt_dir},
            output=output)


COMMANDS = [eval_seg_command, eval_pose_command]
