# routes/plan.py
import logging

import click

from models.errors import InputError
from models.part import PartRecord
from routes import common_options, execute
from utils.io import read_json, write_json
from utils.manip import (HANDLE_CLASSES, actuation_trajectory, check_success, default_motion_range,
                         grasp_pose, replay_motion)
from utils.posefit import joint_from_pose

logger = logging.getLogger(__name__)


def select_parts(payload):
    """(target part, optional handle) from {"part", "handle"} or a part bundle.

    In a bundle with several parts the first non-handle part is the target
    and the first handle part is used to grasp it.
    """
    if isinstance(payload, dict) and 'part' in payload:
        target = PartRecord.from_dict(payload['part'], default_id='part')
        handle = PartRecord.from_dict(payload['handle'], default_id='handle') \
            if payload.get('handle') else None
        return target, handle

    parts = PartRecord.from_bundle(payload)
    if not parts:
        raise InputError('plan input holds no parts')
    if len(parts) == 1:
        return parts[0], None
    targets = [p for p in parts if p.part_class not in HANDLE_CLASSES]
    handles = [p for p in parts if p.part_class in HANDLE_CLASSES]
    if not targets:
        return parts[0], None
    return targets[0], handles[0] if handles else None


def run_plan(app, run_config):
    (plan_path,) = run_config.require('plan')
    part, handle = select_parts(read_json(plan_path))
    joint = part.joint or joint_from_pose(part.pose, part.part_class)

    grasp = grasp_pose(part.pose, part.part_class, handle=handle, intent=run_config.intent,
                       margin=run_config.aperture_margin)
    motion_range = run_config.motion_range or default_motion_range(part.pose, joint)
    trajectory = actuation_trajectory(grasp, joint, motion_range, dt=run_config.dt,
                                      linear_speed=run_config.linear_speed,
                                      angular_speed=run_config.angular_speed,
                                      standoff=run_config.standoff)
    achieved = replay_motion(trajectory, joint)
    success = check_success(achieved, motion_range, app.config.SUCCESS_RATIO)
    logger.info(f"Plan for {part.part_id} ({part.part_class.camel_name}): "
                f"{len(trajectory)} waypoints, achieved {achieved:.4f} of {motion_range:.4f}")

    write_json(run_config.output, {
        'part_id': part.part_id,
        'class': part.part_class.camel_name,
        'handle_id': handle.part_id if handle is not None else None,
        'intent': run_config.intent,
        'joint': joint.to_dict(),
        'grasp': grasp.to_dict(),
        'motion_range': motion_range,
        'trajectory': trajectory.to_dict(),
        'achieved_motion': achieved,
        'success': success
    }, schema_version=app.config.SCHEMA_VERSION)
    return {'success': success, 'num_waypoints': len(trajectory)}


HANDLERS = {'plan': run_plan}


@click.command('plan')
@click.option('--part', 'plan_input', type=click.Path(dir_okay=False), default=None,
              help='JSON {"part", "handle"} or a part bundle such as fit-pose output.')
@click.option('--intent', type=click.Choice(['open', 'fetch']), default=None,
              help='Drawer intent.')
@click.option('--motion-range', type=float, default=None,
              help='Radians (revolute) or meters (prismatic); default per joint kind.')
@click.option('--dt', type=float, default=None, help='Control period in seconds.')
@click.option('--standoff', type=float, default=None, help='Approach standoff in meters.')
@common_options
@click.pass_obj
def plan_command(app, plan_input, intent, motion_range, dt, standoff, output, config_path):
    """Grasp pose and actuation trajectory for one part."""
    execute(app, 'plan', config_path, inputs={'plan': plan_input}, output=output,
            intent=intent, motion_range=motion_range, dt=dt, standoff=standoff)


COMMANDS = [plan_command]
