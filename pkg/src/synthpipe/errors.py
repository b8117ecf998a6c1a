"""Exception taxonomy for the pipeline.

Every domain failure derives from :class:`PipelineError` so the CLI can map
it to a structured diagnostic and exit code 1. Programming errors (bad
arguments, violated internal invariants) raise plain ``ValueError`` /
``TypeError`` as usual.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for recoverable, user-facing pipeline failures."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- corpus I/O -------------------------------------------------------------

class UnreadableFile(PipelineError):
    pass


class SchemaViolation(PipelineError):
    pass


class EmptyCorpus(PipelineError):
    pass


class OversizedDocument(PipelineError):
    pass


class IoFailure(PipelineError):
    pass


# -- segmentation -----------------------------------------------------------

class EmptyText(PipelineError):
    pass


class NoInteriorBoundary(PipelineError):
    pass


# -- prompt strategies ------------------------------------------------------

class UnknownStrategy(PipelineError):
    pass


class EmptyDocument(PipelineError):
    pass


class EmptyEnsemble(PipelineError):
    pass


# -- generation engine ------------------------------------------------------

class ConfigError(PipelineError):
    pass


class BackendRequestError(PipelineError):
    """A single backend call failed; retried up to the configured limit."""


# -- style analysis ---------------------------------------------------------

class UnparseableResponse(PipelineError):
    pass


class MissingLabels(PipelineError):
    pass


class SampleTooLarge(PipelineError):
    pass


# -- mixture construction ---------------------------------------------------

class InsufficientTokens(PipelineError):
    pass


class EpochCapExceeded(PipelineError):
    pass


class InsufficientLabeledTokens(PipelineError):
    pass


# -- results analysis -------------------------------------------------------

class UnsortedInput(PipelineError):
    pass


class KeyMismatch(PipelineError):
    pass


class MissingScale(PipelineError):
    pass
