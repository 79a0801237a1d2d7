class OpinionBenchError(Exception):
    """Base class for every error raised by opinionbench."""


class ConfigurationError(OpinionBenchError, ValueError):
    pass


class ParseError(OpinionBenchError):
    """The model response could not be turned into a command."""


class NoJsonFound(ParseError):
    def __init__(self) -> None:
        super().__init__("no JSON object found in response")


class MissingField(ParseError):
    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"missing field: {path}")


class UnknownTool(OpinionBenchError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"unknown command: {name!r}")


class BackendError(OpinionBenchError):
    pass


class AuthMissing(BackendError):
    def __init__(self, env_var: str) -> None:
        self.env_var = env_var
        super().__init__(f"API key environment variable {env_var} is not set")


class BackendTimeout(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, code: int) -> None:
        self.code = code
        super().__init__(f"HTTP status {code}")


class EmptyCompletion(BackendError):
    def __init__(self) -> None:
        super().__init__("completion response has no content")


class FixtureExhausted(BackendError):
    def __init__(self, cursor: int) -> None:
        self.cursor = cursor
        super().__init__(f"fixture exhausted at call {cursor}")


class NoMatch(BackendError):
    def __init__(self, digest: str) -> None:
        self.digest = digest
        super().__init__(f"no fixture entry for prompt digest {digest}")


class EnvironmentStateError(OpinionBenchError):
    pass


class EpisodeOver(EnvironmentStateError):
    def __init__(self) -> None:
        super().__init__("episode is over")


class DataFileError(EnvironmentStateError, ValueError):
    """A JSON-lines data file (catalog, goals, tasks, fixtures) has a bad line."""

    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {reason}")


class UnsolvableTask(EnvironmentStateError, ValueError):
    pass


class UndefinedRatio(OpinionBenchError, ValueError):
    def __init__(self) -> None:
        super().__init__("ratio undefined over an empty record set")


class MetricsError(OpinionBenchError, ValueError):
    pass


class TaskSelectionError(OpinionBenchError, ValueError):
    pass
