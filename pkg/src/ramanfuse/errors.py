"""Exception hierarchy; CLI exit codes hang off the category."""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError, ValueError):
    exit_code = 2


class DataError(PipelineError, ValueError):
    exit_code = 3


class TrainingError(PipelineError, RuntimeError):
    exit_code = 4

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class StageError(DataError):
    """Operation applied to a spectrum at the wrong processing stage."""


class WindowError(DataError):
    pass


class FitError(DataError):
    pass


class GridMismatchError(DataError):
    pass
