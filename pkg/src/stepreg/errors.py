"""Exception types shared across the toolkit."""


class StepRegError(Exception):
    """Base class for all stepreg errors."""


class ConfigError(StepRegError):
    """Invalid or unknown configuration content."""


class DegenerateCloudError(StepRegError):
    """A cloud too small or collapsed to build the required structure."""


class EstimationError(StepRegError):
    """Rigid-transform estimation could not produce a valid result."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingDivergence(StepRegError):
    """Training loss became non-finite."""


class PlyParseError(StepRegError):
    """Malformed PLY content."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"{message} (line {line_no})"
        super().__init__(message)
        self.line_no = line_no


class OverlapTargetError(StepRegError):
    """Scene generation could not reach the requested overlap."""
