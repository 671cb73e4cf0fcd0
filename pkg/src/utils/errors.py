"""Exception hierarchy shared by every layer of noiselab.

Each exception carries the process exit code the entry point should use when it
reaches the top level: 1 for runtime failures, 2 for usage/config problems.
"""


class NoiseLabError(Exception):
    exit_code = 1


class ShapeError(NoiseLabError, ValueError):
    pass


class NonFiniteError(NoiseLabError, FloatingPointError):
    pass


class TapeError(NoiseLabError):
    pass


class DatasetError(NoiseLabError):
    pass


class DatasetNotFoundError(DatasetError):
    exit_code = 2


class WeightsError(NoiseLabError):
    pass


class ConfigError(NoiseLabError):
    exit_code = 2


class UsageError(NoiseLabError):
    exit_code = 2


class TrainingAborted(NoiseLabError):
    def __init__(self, step, message):
        super().__init__(f"training aborted at step {step}: {message}")
        self.step = step
