# routes/segment.py
import logging

import click

from routes import common_options, execute
from utils.grouping import dual_set_group, filter_and_nms
from utils.io import read_ply, read_prediction_blob, write_json

logger = logging.getLogger(__name__)


def run_segment(app, run_config):
    cloud_path, pred_path = run_config.require('cloud', 'pred')
    cloud = read_ply(cloud_path)
    pred = read_prediction_blob(pred_path)

    proposals = dual_set_group(cloud, pred, radius=run_config.radius,
                               min_points=run_config.min_points)
    kept = filter_and_nms(proposals, fg_prob=pred.foreground_prob,
                          fg_thresh=run_config.fg_thresh,
                          score_thresh=run_config.score_thresh,
                          nms_iou=run_config.nms_iou,
                          min_points=run_config.min_points)
    logger.info(f"Segmented {len(cloud)} points into {len(kept)} proposals "
                f"({len(proposals)} before filtering)")

    write_json(run_config.output, {
        'num_points': len(cloud),
        'proposals': [p.to_dict() for p in kept],
        'params': {
            'radius': run_config.radius,
            'min_points': run_config.min_points,
            'fg_thresh': run_config.fg_thresh,
            'score_thresh': run_config.score_thresh,
            'nms_iou': run_config.nms_iou
        }
    }, schema_version=app.config.SCHEMA_VERSION)
    return {'num_proposals': len(kept)}


HANDLERS = {'segment': run_segment}


@click.command('segment')
@click.option('--cloud', type=click.Path(dir_okay=False), default=None, help='Input PLY cloud.')
@click.option('--pred', type=click.Path(dir_okay=False), default=None,
              help='JSON sidecar of the per-point prediction blob.')
@click.option('--radius', type=float, default=None, help='Clustering radius in meters.')
@click.option('--min-points', type=int, default=None, help='Smallest proposal kept.')
@click.option('--fg-thresh', type=float, default=None, help='Foreground probability cut.')
@click.option('--score-thresh', type=float, default=None, help='Proposal score cut.')
@click.option('--nms-iou', type=float, default=None, help='NMS suppression IoU.')
@common_options
@click.pass_obj
def segment_command(app, cloud, pred, radius, min_points, fg_thresh, score_thresh, nms_iou,
                    output, config_path):
    """Dual-set grouping, filtering and NMS of per-point predictions."""
    execute(app, 'segment', config_path, inputs={'cloud': cloud, 'pred': pred}, output=output,
            radius=radius, min_points=min_points, fg_thresh=fg_thresh,
            score_thresh=score_thresh, nms_iou=nms_iou)


COMMANDS = [segment_command]
