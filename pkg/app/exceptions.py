from typing import Any, Optional


class PipelineException(Exception):
    """
    Base error for every pipeline stage.

    Mirrors an HTTP error: a numeric status code (used as the process exit
    code by the CLI) and a human readable detail.
    """

    status_code: int = 1

    def __init__(self, detail: str, status_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if status_code is not None:
            self.status_code = status_code

    def __str__(self) -> str:
        return self.detail


class ConfigError(PipelineException):
    status_code = 2


class MissingArtifactError(PipelineException):
    status_code = 2


class SpecError(PipelineException):
    status_code = 2


class DomainError(PipelineException):
    status_code = 2


class ContractError(PipelineException):
    status_code = 2


class DegenerateTaskError(PipelineException):
    status_code = 2


class DivergenceError(PipelineException):
    """Raised when a loss turns non-finite. Carries the last finite state."""

    status_code = 3

    def __init__(
        self,
        detail: str,
        step: int = -1,
        last_good_state: Optional[Any] = None,
        checkpoint_path: Optional[str] = None,
    ):
        super().__init__(detail)
        self.step = step
        self.last_good_state = last_good_state
        self.checkpoint_path = checkpoint_path


class IntegrityError(PipelineException):
    status_code = 4

    def __init__(self, detail: str, path: Optional[str] = None):
        super().__init__(detail if path is None else f"{detail}: {path}")
        self.path = path


class FrozenNetError(PipelineException):
    status_code = 5
