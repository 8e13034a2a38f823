# models/run_config.py
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

from models.errors import ConfigError, InputError

COMMANDS = ('ingest', 'fps', 'segment', 'fit-pose', 'eval-seg', 'eval-pose', 'plan', 'adv-demo')

INPUT_KEYS = ('cloud', 'pred', 'depth', 'color', 'intrinsics', 'gt', 'parts', 'plan',
              'pred_dir', 'gt_dir')

INTENTS = ('open', 'fetch')

# (low, high, inclusive-low) per numeric field; None bound = unbounded
RANGES = {
    'radius': (0.0, None, False),
    'min_points': (1, None, True),
    'fg_thresh': (0.0, 1.0, True),
    'score_thresh': (0.0, 1.0, True),
    'nms_iou': (0.0, 1.0, True),
    's_thre': (0.0, 1.0, True),
    'grl_lambda': (0.0, None, True),
    'gamma': (0.0, None, True),
    'classification_weight': (0.0, None, True),
    'ransac_iters': (1, None, True),
    'ransac_inlier_thresh': (0.0, None, False),
    'ransac_inlier_fraction': (0.0, 1.0, False),
    'fps_points': (1, None, True),
    'depth_scale': (0.0, None, False),
    'dt': (0.0, None, False),
    'linear_speed': (0.0, None, False),
    'angular_speed': (0.0, None, False),
    'standoff': (0.0, None, True),
    'aperture_margin': (0.0, None, False),
    'motion_range': (0.0, None, False),
    'domains': (2, None, True),
    'classes': (2, None, True),
    'epochs': (0, None, True),
    'adv_weight': (0.0, None, True),
}


@dataclass(frozen=True)
class RunConfig:
    command: str = None
    inputs: dict = field(default_factory=dict)
    output: str = None

    # grouping
    radius: float = 0.03
    min_points: int = 5
    fg_thresh: float = 0.4
    score_thresh: float = 0.09
    nms_iou: float = 0.3

    # adversarial
    s_thre: float = 0.09
    grl_lambda: float = 0.3
    gamma: float = 2.0
    layer_weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    classification_weight: float = 0.05
    domains: int = 3
    classes: int = 4
    epochs: int = 200
    adv_weight: float = 5.0

    # pose fitting
    ransac_iters: int = 100
    ransac_inlier_thresh: float = None
    ransac_inlier_fraction: float = 0.05

    # ingestion
    fps_points: int = 20000
    depth_scale: float = 1.0

    # planning
    dt: float = 1 / 250
    linear_speed: float = 0.1
    angular_speed: float = 30.0
    standoff: float = 0.1
    aperture_margin: float = 0.02
    motion_range: float = None
    intent: str = 'open'

    seed: int = 0

    @classmethod
    def defaults(cls, base):
        """Defaults taken from a Config class (Config.py)"""
        return cls(
            radius=base.CLUSTER_RADIUS,
            min_points=base.MIN_POINTS,
            fg_thresh=base.FG_THRESH,
            score_thresh=base.SCORE_THRESH,
            nms_iou=base.NMS_IOU,
            s_thre=base.S_THRE,
            grl_lambda=base.GRL_LAMBDA,
            gamma=base.GAMMA,
            layer_weights=tuple(base.LAYER_WEIGHTS),
            classification_weight=base.CLASSIFICATION_WEIGHT,
            adv_weight=base.ADV_WEIGHT,
            ransac_iters=base.RANSAC_ITERS,
            ransac_inlier_fraction=base.RANSAC_INLIER_FRACTION,
            fps_points=base.FPS_POINTS,
            depth_scale=base.DEPTH_SCALE,
            dt=base.CONTROL_DT,
            linear_speed=base.LINEAR_SPEED,
            angular_speed=base.ANGULAR_SPEED,
            standoff=base.APPROACH_STANDOFF,
            aperture_margin=base.APERTURE_MARGIN,
            seed=base.SEED,
        )

    @classmethod
    def from_mapping(cls, data, base=None):
        if not isinstance(data, dict):
            raise ConfigError('config must be a JSON object')
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
        start = cls.defaults(base) if base is not None else cls()
        return start.with_overrides(**data)

    @classmethod
    def load(cls, path, base=None):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise InputError(f'malformed config file: {e.msg}', path=str(path),
                             line=e.lineno, column=e.colno)
        except OSError as e:
            raise InputError(f'cannot read config file: {e}', path=str(path))
        return cls.from_mapping(data, base)

    def with_overrides(self, **overrides):
        """Apply overrides; None values are skipped so unset flags never win"""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
        changes = {k: v for k, v in overrides.items() if v is not None}
        if 'inputs' in changes:
            changes['inputs'] = {**self.inputs, **changes['inputs']}
        if 'layer_weights' in changes:
            changes['layer_weights'] = tuple(float(w) for w in changes['layer_weights'])
        updated = replace(self, **changes)
        updated.validate()
        return updated

    def validate(self):
        errors = []
        if self.command is not None and self.command not in COMMANDS:
            errors.append(f'unknown command {self.command!r}')
        if not isinstance(self.inputs, dict):
            errors.append('inputs must be an object')
        else:
            bad = sorted(set(self.inputs) - set(INPUT_KEYS))
            if bad:
                errors.append(f'unknown input keys: {", ".join(bad)}')
        if self.intent not in INTENTS:
            errors.append(f'intent must be one of {INTENTS}')
        if len(self.layer_weights) != 3 or any(w < 0 for w in self.layer_weights):
            errors.append('layer_weights must be three non-negative numbers')

        for name, (low, high, inclusive) in RANGES.items():
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                errors.append(f'{name} must be a finite number')
                continue
            if low is not None and (value < low or (value == low and not inclusive)):
                errors.append(f'{name}={value} below allowed range')
            if high is not None and value > high:
                errors.append(f'{name}={value} above allowed range')

        if errors:
            raise ConfigError('; '.join(errors))

    def require(self, *keys):
        """Return the requested input paths, failing on missing ones"""
        missing = [k for k in keys if not self.inputs.get(k)]
        if missing:
            raise ConfigError(f'{self.command}: missing inputs {", ".join(missing)}')
        return [self.inputs[k] for k in keys]

    def to_dict(self):
        data = asdict(self)
        data['layer_weights'] = list(self.layer_weights)
        return data
