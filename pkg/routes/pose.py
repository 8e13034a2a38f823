# routes/pose.py
import logging

import click

from models.errors import InputError
from routes import common_options, execute
from utils.io import read_json, write_json
from utils.posefit import fit_part_pose

logger = logging.getLogger(__name__)

# carried from the input part to its fit so the output is a valid part bundle
PASSTHROUGH_KEYS = ('indices', 'score')


def part_entries(payload):
    """Part list of a fit-pose input: {"parts": [...]} or one bare part"""
    if isinstance(payload, dict) and 'parts' in payload:
        entries = payload['parts']
    else:
        entries = [payload]
    if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
        raise InputError('parts must be a list of objects')
    return entries


def run_fit_pose(app, run_config):
    (parts_path,) = run_config.require('parts')
    entries = part_entries(read_json(parts_path))

    fitted = []
    for i, entry in enumerate(entries):
        part_id = str(entry.get('id', i))
        missing = [k for k in ('class', 'points', 'npcs') if k not in entry]
        if missing:
            raise InputError(f'part lacks {", ".join(missing)}', part_id=part_id)
        fit = fit_part_pose(entry['points'], entry['npcs'], entry['class'],
                            iters=run_config.ransac_iters,
                            inlier_thresh=run_config.ransac_inlier_thresh,
                            seed=run_config.seed,
                            inlier_fraction=run_config.ransac_inlier_fraction,
                            part_id=part_id)
        logger.debug(f"Part {part_id}: {int(fit.inliers.sum())}/{len(fit.inliers)} inliers")
        extra = {k: entry[k] for k in PASSTHROUGH_KEYS if k in entry}
        fitted.append({'id': part_id, **extra, **fit.to_dict()})

    write_json(run_config.output, {'parts': fitted}, schema_version=app.config.SCHEMA_VERSION)
    return {'num_parts': len(fitted)}


HANDLERS = {'fit-pose': run_fit_pose}


@click.command('fit-pose')
@click.option('--parts', type=click.Path(dir_okay=False), default=None,
              help='JSON with per-part observed points, predicted NPCS and class.')
@click.option('--iters', 'ransac_iters', type=int, default=None, help='RANSAC trials.')
@click.option('--inlier-thresh', 'ransac_inlier_thresh', type=float, default=None,
              help='Fixed inlier distance in meters (default: adaptive).')
@click.option('--seed', type=int, default=None, help='RANSAC seed.')
@common_options
@click.pass_obj
def fit_pose_command(app, parts, ransac_iters, ransac_inlier_thresh, seed, output, config_path):
    """Recover part poses and joints from predicted NPCS coordinates."""
    execute(app, 'fit-pose', config_path, inputs={'parts': parts}, output=output,
            ransac_iters=ransac_iters, ransac_inlier_thresh=ransac_inlier_thresh, seed=seed)


COMMANDS = [fit_pose_command]
