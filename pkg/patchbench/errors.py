class PatchbenchError(Exception):
    """Base error. `exit_code` is what the CLI returns when the error escapes a command."""

    exit_code: int | None = None


class ConfigError(PatchbenchError):
    exit_code = 1


class InvalidParameterError(PatchbenchError, ValueError):
    pass


class ProjectionError(PatchbenchError):
    pass


class SynthesisError(PatchbenchError):
    exit_code = 2


class DegenerateImageError(SynthesisError):
    pass


class OutOfBoundsError(PatchbenchError):
    pass


class CorpusError(PatchbenchError):
    pass


class StorageError(PatchbenchError):
    exit_code = 3


class CorpusFormatError(StorageError):
    pass


class MissingCorpusError(PatchbenchError):
    exit_code = 4


class DescriptorError(PatchbenchError):
    pass


class PostprocError(PatchbenchError):
    pass


class MetricsError(PatchbenchError):
    pass


class TaskError(PatchbenchError):
    pass


class EvaluationError(PatchbenchError):
    exit_code = 5


class MissingResultsError(StorageError):
    pass
