"""Exception hierarchy shared across the toolkit."""


class AenetError(Exception):
    """Base class for every error raised by this package."""


class ParseError(AenetError):
    """A file line could not be decoded."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class ValidationError(AenetError, ValueError):
    """A record violates a schema rule."""

    def __init__(self, field, rule, detail=""):
        self.field = field
        self.rule = rule
        msg = f"field {field!r} violates rule {rule!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SplitError(AenetError, ValueError):
    pass


class ProtocolError(AenetError, ValueError):
    pass


class ConfigurationError(AenetError, ValueError):
    pass


class GenerationError(AenetError, ValueError):
    pass


class ScoringError(AenetError, ValueError):
    pass


class UndefinedMetricError(AenetError, ValueError):
    """A metric denominator is empty; never reported as 0."""


class CheckpointError(AenetError):
    pass


class ShapeError(AenetError, ValueError):
    pass
