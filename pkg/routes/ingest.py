# routes/ingest.py
import logging
import os

import click

from routes import common_options, execute
from utils.ingest import back_project, farthest_point_sample
from utils.io import read_color_png, read_depth_png, read_intrinsics, read_ply, write_json, write_ply

logger = logging.getLogger(__name__)


def indices_path(output):
    """Index map written next to an fps output cloud"""
    return os.path.splitext(output)[0] + '.indices.json'


def run_ingest(app, run_config):
    depth_path, intr_path = run_config.require('depth', 'intrinsics')
    depth = read_depth_png(depth_path, run_config.depth_scale)
    intr = read_intrinsics(intr_path)
    color = read_color_png(run_config.inputs['color']) if run_config.inputs.get('color') else None

    cloud = back_project(depth, intr, color)
    write_ply(run_config.output, cloud)
    return {'num_points': len(cloud)}


def run_fps(app, run_config):
    (cloud_path,) = run_config.require('cloud')
    cloud = read_ply(cloud_path)
    sampled, indices = farthest_point_sample(cloud, run_config.fps_points)

    write_ply(run_config.output, sampled)
    write_json(indices_path(run_config.output), {
        'num_source_points': len(cloud),
        'indices': indices.tolist()
    }, schema_version=app.config.SCHEMA_VERSION)
    logger.info(f"FPS kept {len(sampled)} of {len(cloud)} points")
    return {'num_points': len(sampled)}


HANDLERS = {
    'ingest': run_ingest,
    'fps': run_fps
}


@click.command('ingest')
@click.option('--depth', type=click.Path(dir_okay=False), default=None,
              help='16-bit depth PNG.')
@click.option('--intrinsics', type=click.Path(dir_okay=False), default=None,
              help='JSON with fx, fy, cx, cy, width, height.')
@click.option('--color', type=click.Path(dir_okay=False), default=None,
              help='Optional 8-bit color PNG of the same size.')
@click.option('--depth-scale', type=float, default=None,
              help='Meters per depth unit (0.001 for millimeter PNGs).')
@common_options
@click.pass_obj
def ingest_command(app, depth, intrinsics, color, depth_scale, output, config_path):
    """Back-project a depth image into an ASCII PLY cloud."""
    execute(app, 'ingest', config_path,
            inputs={'depth': depth, 'intrinsics': intrinsics, 'color': color},
            output=output, depth_scale=depth_scale)


@click.command('fps')
@click.option('--cloud', type=click.Path(dir_okay=False), default=None, help='Input PLY cloud.')
@click.option('--points', 'fps_points', type=int, default=None,
              help='Number of points to keep.')
@common_options
@click.pass_obj
def fps_command(app, cloud, fps_points, output, config_path):
    """Farthest point sampling; also writes <output>.indices.json."""
    execute(app, 'fps', config_path, inputs={'cloud': cloud}, output=output,
            fps_points=fps_points)


COMMANDS = [ingest_command, fps_command]
