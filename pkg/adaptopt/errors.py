"""
Error types raised across the toolkit.

Every error carries a machine-readable code so the command layer can map it
to an exit status and a structured log event.
"""


class AdaptOptError(Exception):
    """Base error with a machine-readable code"""

    code = 'ADAPTOPT_ERROR'

    def __init__(self, message, code=None):
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code

    def to_dict(self):
        return {
            'error': True,
            'message': self.message,
            'code': self.code
        }


class InvalidArgumentError(AdaptOptError, ValueError):
    code = 'INVALID_ARGUMENT'


class LevelCapError(AdaptOptError):
    code = 'LEVEL_CAP_EXCEEDED'


class PreconditionError(AdaptOptError):
    code = 'PRECONDITION_VIOLATED'


class InvertedElementError(AdaptOptError):
    """Raised when a deformation gradient has J <= 0"""
    code = 'INVERTED_ELEMENT'


class SolverFailure(AdaptOptError):
    """Newton or linear solver failure, optionally tied to a load step"""
    code = 'SOLVER_FAILURE'

    def __init__(self, message, step=None, code=None):
        super().__init__(message, code)
        self.step = step

    def to_dict(self):
        data = super().to_dict()
        data['step'] = self.step
        return data


class UnconvergedSolutionError(SolverFailure):
    code = 'UNCONVERGED_SOLUTION'


class ConfigError(AdaptOptError):
    """Run configuration could not be parsed or validated"""
    code = 'CONFIG_ERROR'

    def __init__(self, message, keys=None, errors=None):
        super().__init__(message)
        self.keys = list(keys or [])
        self.errors = list(errors or [])

    def to_dict(self):
        data = super().to_dict()
        data['keys'] = self.keys
        data['errors'] = self.errors
        return data


# CLI exit codes
EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_CONFIG_ERROR = 2
