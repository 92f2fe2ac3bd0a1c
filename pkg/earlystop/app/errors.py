# earlystop/app/errors.py
from typing import Any, Optional


class EarlyStopError(Exception):
    """Base error: a (code, detail) pair, the code doubling as the cli exit status."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None, **context: Any):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code
        self.context = context

    def __str__(self) -> str:
        if not self.context:
            return self.detail
        extra = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.detail} ({extra})"


class ConfigurationError(EarlyStopError):
    exit_code = 2


class InvalidStepError(ConfigurationError):
    pass


class NumericalError(EarlyStopError):
    exit_code = 3


class EigensolverError(NumericalError):
    def __init__(self, detail: str, sweeps: int, **context: Any):
        super().__init__(detail, sweeps=sweeps, **context)
        self.sweeps = sweeps


class PSDViolationError(NumericalError):
    def __init__(self, kernel: str, eigenvalue: float):
        super().__init__("Gram matrix is not positive semidefinite", kernel=kernel, eigenvalue=eigenvalue)
        self.kernel = kernel
        self.eigenvalue = eigenvalue


class DegenerateKernelError(NumericalError):
    pass


class NoStopError(DegenerateKernelError):
    pass


class TrialError(EarlyStopError):
    """Wraps a module error with the trial it came from; keeps the wrapped exit code."""

    def __init__(self, trial_id: int, cause: EarlyStopError):
        super().__init__(cause.detail, exit_code=cause.exit_code, trial_id=trial_id, **cause.context)
        self.trial_id = trial_id
        self.cause = cause


class AcceptanceError(EarlyStopError):
    exit_code = 4
