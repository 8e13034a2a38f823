# models/errors.py


class PartKitError(Exception):
    """Base class for every failure the pipeline reports to the caller"""

    kind = 'error'
    exit_code = 1

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_dict(self):
        return {
            'success': False,
            'kind': self.kind,
            'error': self.message,
            **self.context
        }


class InputError(PartKitError):
    """Malformed or inconsistent input data (files, arrays, dimensions)"""
    kind = 'input'
    exit_code = 3


class ConfigError(PartKitError):
    kind = 'config'
    exit_code = 4


class FitError(PartKitError):
    """A numerical fit could not produce a model (degenerate points, no inliers)"""
    kind = 'fit'
    exit_code = 5


class MetricError(PartKitError):
    kind = 'metric'
    exit_code = 6


class PolicyError(PartKitError):
    """The manipulation policy has no action for the requested part/joint"""
    kind = 'policy'
    exit_code = 7
