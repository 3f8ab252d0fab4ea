from typing import TYPE_CHECKING, List, Optional

if TYPE_CHECKING:
    from persona_bench.workers.session import Transcript


class PersonaBenchError(Exception):
    exit_code = 1


class InvalidArgumentError(PersonaBenchError):
    exit_code = 1


class ConfigError(PersonaBenchError):
    exit_code = 1


class LexiconParseError(ConfigError):
    def __init__(self, message: str, line_number: int = 0):
        self.line_number = line_number
        if line_number:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class BackendError(PersonaBenchError):
    exit_code = 2


class SessionError(BackendError):
    """A session gave up after retries; `transcript` holds what was collected."""

    def __init__(self, message: str, transcript: Optional["Transcript"] = None):
        self.transcript = transcript
        super().__init__(message)


class AnalysisError(PersonaBenchError):
    exit_code = 3


class InsufficientDataError(AnalysisError):
    pass


class DegenerateResponseError(AnalysisError):
    pass


class SingularDesignError(AnalysisError):
    def __init__(self, message: str, missing_cells: Optional[List[str]] = None):
        self.missing_cells = missing_cells or []
        super().__init__(message)


class EmptyResultError(AnalysisError):
    pass


class ReportError(AnalysisError):
    pass
