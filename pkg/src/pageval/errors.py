"""Exception hierarchy shared across the engine."""


class PagevalError(Exception):
    """Base class for all engine errors."""


class ManifestError(PagevalError):
    """Manifest is syntactically or semantically invalid."""

    def __init__(self, message, locus=None):
        self.locus = locus
        if locus:
            message = f"{message} (at {locus})"
        super().__init__(message)


class DanglingIdError(ManifestError):
    """An entry references an id that does not resolve."""


class DuplicateIdError(ManifestError):
    """The same id is declared or bound more than once."""


class ArtifactIOError(PagevalError):
    """An artifact file could not be read."""

    def __init__(self, message, path):
        self.path = str(path)
        super().__init__(f"{message}: {self.path}")


class DegeneratePageError(PagevalError):
    """Page has no measurable container area."""


class LayoutImportError(PagevalError):
    """Imported layout measurements violate the schema."""

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{message} (field: {field})"
        super().__init__(message)


class GatewayError(PagevalError):
    """Base class for model-gateway failures."""


class AuthError(GatewayError):
    """API key missing or rejected."""


class TransportError(GatewayError):
    """Network failure that survived the retry budget."""


class ReplayMissError(GatewayError):
    """Replay store has no record for the request digest."""

    def __init__(self, digest):
        self.digest = digest
        super().__init__(f"no recorded response for request digest {digest}")


class SchemaFailureError(GatewayError):
    """Model never produced output matching the expected structure."""

    def __init__(self, message, raw_text="", violations=()):
        self.raw_text = raw_text
        self.violations = list(violations)
        super().__init__(message)


class RateLimitConfigError(GatewayError):
    """Provider profile declares unusable rate or price settings."""


class JudgeFailureError(PagevalError):
    """A judge dimension could not be scored for an artifact."""

    def __init__(self, dimension, message):
        self.dimension = dimension
        super().__init__(f"judge failure on {dimension}: {message}")


class QuizValidationError(PagevalError):
    """Quiz generation exhausted its regeneration budget."""

    def __init__(self, message, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class ConfigError(PagevalError):
    """Evaluation configuration is invalid."""


class FingerprintMismatchError(PagevalError):
    """Reports produced under different parameter sets cannot merge."""


class MergeOverlapError(PagevalError):
    """Reports to merge share artifact ids."""
