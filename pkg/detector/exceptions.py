"""
Exception hierarchy for the detector app.

Each error carries the process exit code the management commands use
(1 = usage/config, 2 = numeric/runtime) plus whatever context locates it.
"""


class DetectorError(Exception):
    """Base class for all detector errors"""
    exit_code = 2
    kind = 'runtime'

    def as_line(self):
        """Single machine-readable line for command output"""
        message = str(self).replace('"', "'")
        return f'error={self.kind} message="{message}"'


class ConfigurationError(DetectorError):
    exit_code = 1
    kind = 'config'


class DomainError(DetectorError, ValueError):
    kind = 'domain'


class DegenerateFitError(DomainError):
    kind = 'degenerate_fit'


class FormatError(DetectorError):
    kind = 'format'

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f'{message} (at byte offset {offset})'
        super().__init__(message)
        self.offset = offset


class NumericError(DetectorError):
    kind = 'numeric'

    def __init__(self, message, layer_index=None, sample_index=None):
        super().__init__(message)
        self.layer_index = layer_index
        self.sample_index = sample_index


class TrainingError(DetectorError):
    kind = 'training'

    def __init__(self, message, epoch=None, batch_index=None, decomposition=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.decomposition = decomposition or {}


class InternalError(DetectorError):
    kind = 'internal'


class EvaluationError(DetectorError):
    kind = 'evaluation'


class ScoringError(DetectorError):
    kind = 'scoring'

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index
