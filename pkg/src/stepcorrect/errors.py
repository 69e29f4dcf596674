"""Exception types shared across the pipeline stages."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


# corpus
class MissingAnswerMarker(PipelineError):
    """Response contains no final-answer marker."""


class MalformedStepHeader(PipelineError):
    """Step headers are missing, duplicated, or non-contiguous."""


class EmptySteps(PipelineError):
    """A response cannot be rendered from zero steps."""


class InvalidFoldCount(PipelineError):
    """Fold count must be at least 2."""


# inference
class BackendError(PipelineError):
    """Base class for generation-backend failures."""


class NetworkError(BackendError):
    """Transport-level failure after retries were exhausted."""


class RateLimited(BackendError):
    """Endpoint kept returning 429 after all retry attempts."""


class MalformedBackendResponse(BackendError):
    """Endpoint answered with a payload the client cannot interpret."""


class ScriptMiss(BackendError):
    """Scripted oracle has no entry for the requested context."""


# sampler
class IncompleteRollouts(PipelineError):
    """Fewer rollouts than requested were obtained after retries."""


# annotator
class MissingPlaceholder(PipelineError):
    """Annotation prompt template lacks a required placeholder."""


class EmptySlot(PipelineError):
    """A content slot for the annotation prompt is empty."""


class AnnotationParseError(PipelineError):
    """Annotation response lacks the expected section headers."""


# assembler
class IndexOutOfRange(PipelineError):
    """Insertion index does not fit the sample's step range."""


class MissingAnnotation(PipelineError):
    """Variant requires an annotation but none was supplied."""


class MissingRollout(PipelineError):
    """Instance-level assembly needs a retained wrong rollout."""


class SpanBoundaryError(PipelineError):
    """A byte span does not fall on UTF-8 character boundaries."""


# mixer
class DuplicateId(PipelineError):
    """The same sample id appears more than once across merge inputs."""


class UnknownQuery(PipelineError):
    """A target query has no counterpart in the original corpus."""


# mcts
class DepthExceeded(PipelineError):
    """A search prefix grew beyond the configured step budget."""


# cli
class ConfigInvalid(PipelineError):
    """Pipeline configuration failed validation."""


class StageInputMissing(PipelineError):
    """A stage's input artifact does not exist in the workdir."""
