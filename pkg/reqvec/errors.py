"""
Exception hierarchy.

Every error raised by the library derives from ReqvecError. Each module family
carries the process exit code the CLI uses when the error escapes a command.
"""


class ReqvecError(Exception):
    exit_code = 1


# ---------------------------------------------------------------------------
# Artifacts / IO
# ---------------------------------------------------------------------------


class ArtifactError(ReqvecError):
    exit_code = 10


class IoError(ArtifactError):
    """A file could not be read or written."""


class FormatError(ArtifactError):
    """A file exists but its content is not a valid artifact."""


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


class CorpusError(ReqvecError):
    exit_code = 3


class EmptyInput(CorpusError):
    pass


class MalformedRequestLine(CorpusError):
    pass


class UnknownProfile(CorpusError):
    pass


class SchemaError(CorpusError):
    pass


class ClassTooSmall(CorpusError):
    pass


class InvalidOption(CorpusError, ValueError):
    """A corpus operation was given an unusable option (empty host pool, k < 2)."""


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------


class TokenizerError(ReqvecError):
    exit_code = 4


class EmptyCorpus(TokenizerError):
    pass


class UnknownId(TokenizerError):
    pass


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


class EncoderError(ReqvecError):
    exit_code = 5


class InvalidConfig(EncoderError):
    pass


class SequenceTooLong(EncoderError):
    pass


class NothingToMask(EncoderError):
    pass


class ShapeMismatch(EncoderError):
    pass


# ---------------------------------------------------------------------------
# embedder
# ---------------------------------------------------------------------------


class EmbeddingError(ReqvecError):
    exit_code = 6


class TooFewLayers(EmbeddingError):
    pass


class EmptyDocument(EmbeddingError):
    def __init__(self, message: str, doc_id: str | None = None):
        super().__init__(message)
        self.doc_id = doc_id


class FingerprintMismatch(EmbeddingError):
    pass


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


class ClassifierError(ReqvecError):
    exit_code = 7


class SingleClass(ClassifierError):
    pass


class DimensionMismatch(ClassifierError):
    pass


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------


class ExplainError(ReqvecError):
    exit_code = 8


class ModelMismatch(ExplainError):
    pass


class DegenerateScale(ExplainError):
    pass


class UnknownDocId(ExplainError):
    pass


class NTooLarge(ExplainError):
    pass


class MismatchedReport(ExplainError):
    pass


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------


class ProjectionError(ReqvecError):
    exit_code = 9


class PerplexityTooLarge(ProjectionError):
    pass


class DegenerateInput(ProjectionError):
    pass
