# tests/test_cli.py
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from app import cli
from Config import __version__
from models.cloud import PointCloud
from models.part import PartPose, SimilarityTransform
from utils.geometry import random_rotation, rot_z
from utils.io import write_depth_png, write_ply

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')
CLOUD = os.path.join(FIXTURES, 'segment_cloud.ply')
PRED = os.path.join(FIXTURES, 'segment_pred.json')
GOLDEN = os.path.join(FIXTURES, 'segment_golden.json')

SUBCOMMANDS = ['ingest', 'fps', 'segment', 'fit-pose', 'eval-seg', 'eval-pose', 'plan',
               'adv-demo', 'run']


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def invoke(runner):
    def run(*args):
        return runner.invoke(cli, ['--env', 'testing', *[str(a) for a in args]])
    return run


def error_of(result):
    """The JSON error line printed on stderr"""
    lines = [line for line in result.output.splitlines() if line.startswith('{')]
    return json.loads(lines[-1])


def load(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def dump(path, data):
    path.write_text(json.dumps(data))
    return path


def bundle(*parts):
    return {'parts': [{'id': part_id, 'class': name, 'pose': pose.to_dict()}
                      for part_id, name, pose in parts]}


def door_fit_input(rng):
    size = np.array([0.5, 0.04, 0.7])
    extent = size / np.linalg.norm(size)
    truth = SimilarityTransform(random_rotation(rng), [0.2, -0.1, 1.5], float(np.linalg.norm(size)))
    half = extent / 2.0
    npcs = np.vstack([
        np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half,
        rng.uniform(-half, half, size=(40, 3))
    ])
    return {'parts': [{'id': 'door', 'class': 'HingeDoor', 'points': truth.apply(npcs).tolist(),
                       'npcs': npcs.tolist(), 'score': 0.9}]}, truth, size


class TestSurface:
    @pytest.mark.parametrize('command', SUBCOMMANDS)
    def test_help_and_version(self, invoke, command):
        result = invoke(command, '--help')
        assert result.exit_code == 0
        assert 'Usage' in result.output
        result = invoke(command, '--version')
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_group_version(self, runner):
        result = runner.invoke(cli, ['--version'])
        assert result.exit_code == 0
        assert __version__ in result.output


class TestSegment:
    def test_matches_the_golden_proposals(self, invoke, tmp_path):
        out = tmp_path / 'proposals.json'
        result = invoke('segment', '--cloud', CLOUD, '--pred', PRED, '-o', out)
        assert result.exit_code == 0, result.output
        assert load(out) == load(GOLDEN)

    def test_repeated_runs_are_byte_identical(self, invoke, tmp_path):
        first, second = tmp_path / 'a.json', tmp_path / 'b.json'
        invoke('segment', '--cloud', CLOUD, '--pred', PRED, '-o', first)
        invoke('segment', '--cloud', CLOUD, '--pred', PRED, '-o', second)
        assert first.read_bytes() == second.read_bytes()

    def test_flags_override_the_config_file(self, invoke, tmp_path):
        config_path = dump(tmp_path / 'run.json', {'min_points': 20})
        out = tmp_path / 'proposals.json'
        result = invoke('segment', '--cloud', CLOUD, '--pred', PRED, '--config', config_path,
                        '--min-points', 5, '-o', out)
        assert result.exit_code == 0
        assert len(load(out)['proposals']) == 2
        invoke('segment', '--cloud', CLOUD, '--pred', PRED, '--config', config_path, '-o', out)
        assert load(out)['proposals'] == []

    def test_unknown_config_key_exits_4_and_writes_nothing(self, invoke, tmp_path):
        config_path = dump(tmp_path / 'run.json', {'radiuss': 0.05})
        out = tmp_path / 'proposals.json'
        result = invoke('segment', '--cloud', CLOUD, '--pred', PRED, '--config', config_path,
                        '-o', out)
        assert result.exit_code == 4
        assert error_of(result)['kind'] == 'config'
        assert 'radiuss' in error_of(result)['error']
        assert not out.exists()

    def test_missing_input_file_exits_3(self, invoke, tmp_path):
        result = invoke('segment', '--cloud', tmp_path / 'missing.ply', '--pred', PRED,
                        '-o', tmp_path / 'out.json')
        assert result.exit_code == 3
        assert error_of(result)['kind'] == 'input'

    def test_missing_inputs_exit_4(self, invoke, tmp_path):
        result = invoke('segment', '--cloud', CLOUD, '-o', tmp_path / 'out.json')
        assert result.exit_code == 4
        assert 'pred' in error_of(result)['error']

    def test_run_reads_command_and_paths_from_the_config(self, invoke, tmp_path):
        out = tmp_path / 'proposals.json'
        config_path = dump(tmp_path / 'run.json', {
            'command': 'segment', 'inputs': {'cloud': CLOUD, 'pred': PRED}, 'output': str(out)})
        result = invoke('run', '--config', config_path)
        assert result.exit_code == 0, result.output
        assert load(out) == load(GOLDEN)

    def test_segment_then_evaluate(self, invoke, tmp_path):
        gt = tmp_path / 'gt.ply'
        positions = np.column_stack([np.r_[np.arange(10) * 0.02, 0.5], np.zeros(11), np.zeros(11)])
        write_ply(gt, PointCloud(positions, semantic_labels=[3] * 10 + [0],
                                 instance_labels=[0] * 5 + [1] * 5 + [-1]))
        proposals = tmp_path / 'proposals.json'
        invoke('segment', '--cloud', CLOUD, '--pred', PRED, '-o', proposals)

        report_path = tmp_path / 'seg_report.json'
        result = invoke('eval-seg', '--pred', proposals, '--gt', gt, '-o', report_path)
        assert result.exit_code == 0, result.output
        report = load(report_path)
        assert report['AP50'] == {'HingeHandle': 1.0}
        assert report['Avg.AP'] == pytest.approx(1.0)
        assert report['num_ground_truth'] == 2


class TestIngest:
    def test_depth_to_sampled_cloud(self, invoke, tmp_path):
        depth = np.full((6, 8), 1.25)
        depth[0, 0] = 0.0
        write_depth_png(tmp_path / 'depth.png', depth, depth_scale=0.001)
        intrinsics = dump(tmp_path / 'cam.json', {'fx': 10.0, 'fy': 10.0, 'cx': 4.0, 'cy': 3.0,
                                                  'width': 8, 'height': 6})
        cloud_path = tmp_path / 'cloud.ply'
        result = invoke('ingest', '--depth', tmp_path / 'depth.png', '--intrinsics', intrinsics,
                        '--depth-scale', 0.001, '-o', cloud_path)
        assert result.exit_code == 0, result.output

        sampled = tmp_path / 'sampled.ply'
        result = invoke('fps', '--cloud', cloud_path, '--points', 5, '-o', sampled)
        assert result.exit_code == 0, result.output
        index_map = load(tmp_path / 'sampled.indices.json')
        assert index_map['num_source_points'] == 47
        assert index_map['indices'][0] == 0
        assert len(set(index_map['indices'])) == 5
        assert sampled.read_text().count('\n') > 5


class TestPoseAndPlan:
    def test_fit_then_plan_opens_the_door(self, invoke, tmp_path, rng):
        parts, truth, size = door_fit_input(rng)
        fitted_path = tmp_path / 'fitted.json'
        result = invoke('fit-pose', '--parts', dump(tmp_path / 'parts.json', parts),
                        '-o', fitted_path)
        assert result.exit_code == 0, result.output
        (door,) = load(fitted_path)['parts']
        assert door['id'] == 'door'
        assert door['score'] == 0.9
        np.testing.assert_allclose(door['pose']['size'], size, atol=1e-9)
        np.testing.assert_allclose(door['pose']['translation'], truth.translation, atol=1e-9)

        plan_path = tmp_path / 'plan.json'
        result = invoke('plan', '--part', fitted_path, '-o', plan_path)
        assert result.exit_code == 0, result.output
        plan = load(plan_path)
        assert plan['success'] is True
        assert plan['class'] == 'HingeDoor'
        assert plan['motion_range'] == pytest.approx(np.pi / 2)
        assert plan['achieved_motion'] == pytest.approx(np.pi / 2)
        assert plan['trajectory']['waypoints'][0]['phase'] == 'approach'

    def test_degenerate_fit_exits_5(self, invoke, tmp_path):
        parts = {'parts': [{'id': 'p0', 'class': 'SliderDrawer', 'points': [[0, 0, 0]] * 2,
                            'npcs': [[0, 0, 0]] * 2}]}
        result = invoke('fit-pose', '--parts', dump(tmp_path / 'parts.json', parts),
                        '-o', tmp_path / 'out.json')
        assert result.exit_code == 5
        assert error_of(result)['part_id'] == 'p0'

    def test_fixed_part_exits_7(self, invoke, tmp_path):
        handle = PartPose(np.eye(3), [0.0, 0.0, 0.5], [0.1, 0.02, 0.02])
        plan_input = dump(tmp_path / 'handle.json', bundle(('h', 'LineFixedHandle', handle)))
        result = invoke('plan', '--part', plan_input, '-o', tmp_path / 'plan.json')
        assert result.exit_code == 7
        assert error_of(result)['kind'] == 'policy'

    def test_plan_uses_the_handle_of_a_bundle(self, invoke, tmp_path):
        door = PartPose(np.eye(3), [0.0, 0.0, 1.0], [0.5, 0.04, 0.7])
        handle = PartPose(np.eye(3), [0.2, 0.0, 1.03], [0.02, 0.12, 0.02])
        plan_input = dump(tmp_path / 'object.json',
                          bundle(('h', 'LineFixedHandle', handle), ('d', 'HingeDoor', door)))
        out = tmp_path / 'plan.json'
        result = invoke('plan', '--part', plan_input, '--motion-range', 0.5, '--standoff', 0,
                        '-o', out)
        assert result.exit_code == 0, result.output
        plan = load(out)
        assert (plan['part_id'], plan['handle_id']) == ('d', 'h')
        np.testing.assert_allclose(plan['grasp']['position'], [0.2, 0.0, 1.04])
        assert plan['trajectory']['waypoints'][0]['phase'] == 'grasp'
        assert plan['success'] is True


class TestEvalPose:
    def scene(self, shift=0.0, angle=0.0):
        door = PartPose(rot_z(angle), [shift, 0.0, 1.0], [0.5, 0.04, 0.7])
        drawer = PartPose(np.eye(3), [0.0, 0.3, 0.4], [0.4, 0.3, 0.2])
        return bundle(('door', 'HingeDoor', door), ('drawer', 'SliderDrawer', drawer))

    def test_identical_bundles_score_zero(self, invoke, tmp_path):
        gt = dump(tmp_path / 'gt.json', self.scene())
        out = tmp_path / 'pose.json'
        result = invoke('eval-pose', '--pred', gt, '--gt', gt, '-o', out)
        assert result.exit_code == 0, result.output
        summary = load(out)['summary']
        for key in ('R_e', 'T_e', 'S_e', 'theta_e', 'd_e'):
            assert summary[key] == pytest.approx(0.0, abs=1e-6)
        assert summary['mIoU'] == pytest.approx(1.0)
        assert summary['A5'] == summary['A10'] == 100.0
        assert (summary['matched'], summary['total_gt']) == (2, 2)

    def test_directory_mode(self, invoke, tmp_path):
        pred_dir, gt_dir = tmp_path / 'pred', tmp_path / 'gt'
        pred_dir.mkdir()
        gt_dir.mkdir()
        dump(gt_dir / 'cabinet.json', self.scene())
        dump(pred_dir / 'cabinet.json', self.scene(shift=0.03, angle=7.0))
        dump(gt_dir / 'box.json', self.scene())
        out = tmp_path / 'pose.json'
        result = invoke('eval-pose', '--pred-dir', pred_dir, '--gt-dir', gt_dir, '-o', out)
        assert result.exit_code == 0, result.output
        report = load(out)
        assert report['num_objects'] == 2
        assert (report['summary']['matched'], report['summary']['total_gt']) == (2, 4)
        door = next(p for p in report['parts'] if p['part'] == 'door')
        assert door['object'] == 'cabinet'
        assert door['T_e'] == pytest.approx(3.0)
        assert door['R_e'] == pytest.approx(7.0)
        assert report['summary']['A5'] == 50.0
        assert report['summary']['A10'] == 100.0

    def test_needs_bundles_or_directories(self, invoke, tmp_path):
        result = invoke('eval-pose', '-o', tmp_path / 'pose.json')
        assert result.exit_code == 4


class TestAdversarialDemo:
    def test_short_run_is_reproducible(self, invoke, tmp_path):
        first, second = tmp_path / 'a.json', tmp_path / 'b.json'
        for out in (first, second):
            result = invoke('adv-demo', '--epochs', 3, '--seed', 2, '-o', out)
            assert result.exit_code == 0, result.output
        assert first.read_bytes() == second.read_bytes()
        report = load(first)
        assert report['schema_version'] == 1
        assert 'final' in report
