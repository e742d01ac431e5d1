"""Exception types shared across the package.

File-system problems (unreadable manifests, missing stop-word files) are
reported with the builtin OSError family rather than a custom wrapper.
"""


class BackendError(Exception):
    """A model or embedding backend failed to produce a usable response."""


class TransportError(BackendError):
    """Network or protocol failure while talking to a backend."""


class SchemaError(BackendError):
    """Backend response was not valid JSON or violated the requested schema.

    ``raw`` carries the offending response text when available.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ParseError(Exception):
    """Manifest or dataset file is structurally malformed."""


class ValidationError(Exception):
    """A registry violated one of its invariants.

    ``violations`` lists every broken rule, each naming the offending id.
    """

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class UnknownIdError(Exception):
    """A referenced domain/collection/document id does not exist."""


class EmptyDocumentError(Exception):
    """A document produced zero tokens and cannot be chunked."""


class EmptyIndexError(Exception):
    """An index was requested over an empty chunk list."""


class DimensionMismatchError(Exception):
    """Embedding vectors with inconsistent dimensions were supplied."""


class JudgeError(Exception):
    """An evaluation judge failed after retries; the record is unevaluable."""


class EmptyDatasetError(Exception):
    """An evaluation was requested over zero records."""
